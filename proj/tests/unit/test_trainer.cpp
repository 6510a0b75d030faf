#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "hfr/data/syndata.hpp"
#include "hfr/net/backbone.hpp"
#include "hfr/train/trainer.hpp"

using namespace hfr::train;
using hfr::adapt::AdaptConfig;
using hfr::grad::Shape;
using hfr::grad::Tensor;

namespace {

TrainConfig small_config(const std::string& layers, double lambda) {
    TrainConfig c;
    c.adapt = AdaptConfig::parse(layers);
    c.lambda = lambda;
    c.lr = 1e-2;
    c.epochs = 2;
    c.batch_size = 4;
    return c;
}

bool same_weights(const hfr::net::Model& a, const hfr::net::Model& b) {
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        if (a.params()[i].tensor.values() != b.params()[i].tensor.values()) return false;
    }
    return true;
}

struct Fixture {
    hfr::data::Dataset dataset{6, 2, 17};
    std::vector<int> ids{0, 1, 2, 3, 4, 5};
    hfr::net::Model pretrained = hfr::net::build(hfr::net::BackboneConfig{}, 5);
};

}  // namespace

TEST_CASE("adam examples") {
    SUBCASE("single scalar first step") {
        AdamState s;
        s.lr = 0.1;
        std::vector<double> w{1.0};
        const std::vector<double> g{1.0};
        const std::vector<std::span<double>> p{w};
        const std::vector<std::span<const double>> gr{g};
        adam_step(s, p, gr);
        CHECK(s.t == 1);
        CHECK(w[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
        CHECK(s.m[0][0] == doctest::Approx(0.1).epsilon(1e-15));
        CHECK(s.v[0][0] == doctest::Approx(0.001).epsilon(1e-15));
    }
    SUBCASE("zero gradient leaves parameters untouched") {
        AdamState s;
        std::vector<double> w{0.3, -0.7};
        const std::vector<double> g{0.0, 0.0};
        const std::vector<std::span<double>> p{w};
        const std::vector<std::span<const double>> gr{g};
        for (int i = 0; i < 3; ++i) adam_step(s, p, gr);
        CHECK(w == std::vector<double>{0.3, -0.7});
        CHECK(s.m[0] == std::vector<double>{0.0, 0.0});
        CHECK(s.v[0] == std::vector<double>{0.0, 0.0});
        CHECK(s.t == 3);
    }
    SUBCASE("pure function of its inputs") {
        AdamState s1, s2;
        std::vector<double> w1{0.5, 0.2}, w2{0.5, 0.2};
        const std::vector<double> g{0.3, -0.1};
        for (int i = 0; i < 4; ++i) {
            adam_step(s1, std::vector<std::span<double>>{w1}, std::vector<std::span<const double>>{g});
            adam_step(s2, std::vector<std::span<double>>{w2}, std::vector<std::span<const double>>{g});
        }
        CHECK(w1 == w2);
        CHECK(s1.m == s2.m);
        CHECK(s1.v == s2.v);
    }
    SUBCASE("non-finite gradient is rejected before any change") {
        AdamState s;
        std::vector<double> w{1.0, 2.0};
        const std::vector<double> g{0.1, std::numeric_limits<double>::quiet_NaN()};
        CHECK_THROWS_AS(adam_step(s, std::vector<std::span<double>>{w}, std::vector<std::span<const double>>{g}),
                        TrainingDiverged);
        CHECK(w == std::vector<double>{1.0, 2.0});
        CHECK(s.t == 0);
    }
    SUBCASE("tensor overload treats a missing gradient as zero") {
        AdamState s;
        Tensor a(Shape{2}, 1.0), b(Shape{1}, 2.0);
        a.ensure_grad()[0] = 0.5;
        Tensor* ps[] = {&a, &b};
        adam_step(s, ps);
        CHECK(a[0] < 1.0);
        CHECK(a[1] == 1.0);
        CHECK(b[0] == 2.0);
    }
}

TEST_CASE("steps per epoch") {
    CHECK(steps_per_epoch(50, 10, 32) == 16);
    CHECK(steps_per_epoch(4, 8, 32) == 1);
    CHECK(steps_per_epoch(3, 1, 32) == 1);
}

TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.lambda = 1.2;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.batch_size = 1;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.lr = 0.0;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.positive_fraction = 1.0;
    CHECK_THROWS(c.validate());
}

TEST_CASE("adaptation invariants") {
    Fixture f;
    const auto before = f.pretrained;

    SUBCASE("lambda 1 is a bitwise no-op") {
        const AdaptResult r = adapt(f.pretrained, f.dataset, f.ids, small_config("LN,ST,S0", 1.0));
        CHECK(same_weights(r.model, f.pretrained));
        REQUIRE_FALSE(r.log.steps.empty());
        for (const auto& s : r.log.steps) CHECK(s.l_sdl == 0.0);
    }
    SUBCASE("nothing trainable leaves the model unchanged") {
        for (double lambda : {0.0, 0.5}) {
            const AdaptResult r = adapt(f.pretrained, f.dataset, f.ids, small_config("", lambda));
            CHECK(same_weights(r.model, f.pretrained));
            CHECK(r.log.report.trainable() == 0);
        }
    }
    SUBCASE("only adapted groups move and the log is consistent") {
        const TrainConfig cfg = small_config("LN,ST", 0.4);
        const AdaptResult r = adapt(f.pretrained, f.dataset, f.ids, cfg);
        CHECK(hfr::adapt::verify_frozen(f.pretrained, r.model, cfg.adapt).ok);
        CHECK_FALSE(same_weights(r.model, f.pretrained));
        CHECK(r.log.steps.size() == cfg.epochs * steps_per_epoch(6, 2, 4));
        for (std::size_t i = 0; i < r.log.steps.size(); ++i) {
            const auto& s = r.log.steps[i];
            CHECK(s.step == i);
            CHECK(std::abs(s.l_total - ((1.0 - cfg.lambda) * s.l_c + cfg.lambda * s.l_sdl)) <= 1e-12);
        }
        CHECK(r.log.steps.front().l_sdl == 0.0);
        for (const auto& p : r.model.params()) CHECK_FALSE(p.tensor.has_grad());
        CHECK(same_weights(f.pretrained, before));

        std::ostringstream csv;
        r.log.write_csv(csv);
        CHECK(csv.str().rfind("step,l_c,l_sdl,l_total\n", 0) == 0);
    }
    SUBCASE("fixed seeds give bit-identical results") {
        const TrainConfig cfg = small_config("LN,ST,S0", 0.75);
        const AdaptResult a = adapt(f.pretrained, f.dataset, f.ids, cfg);
        const AdaptResult b = adapt(f.pretrained, f.dataset, f.ids, cfg);
        CHECK(same_weights(a.model, b.model));
        TrainConfig other = cfg;
        other.seeds.sampler = 7;
        CHECK_FALSE(same_weights(adapt(f.pretrained, f.dataset, f.ids, other).model, a.model));
    }
    SUBCASE("retention of an unchanged model") {
        const auto [pre, post] = retention_eval(f.pretrained, f.pretrained, f.dataset, f.ids);
        CHECK(pre == post);
    }
    SUBCASE("mismatched inputs") {
        hfr::data::Dataset other(4, 2, 1, 16);
        CHECK_THROWS(adapt(f.pretrained, other, std::vector<int>{0, 1, 2}, small_config("LN", 0.5)));
        CHECK_THROWS(adapt(f.pretrained, f.dataset, std::vector<int>{0}, small_config("LN", 0.5)));
    }
}

TEST_CASE("pretraining") {
    const hfr::data::Dataset d(6, 2, 23);
    const std::vector<int> ids{0, 1, 2, 3, 4, 5};
    PretrainOptions o;
    o.epochs = 1;
    o.batch_size = 4;
    const PretrainResult a = pretrain_source(hfr::net::BackboneConfig{}, d, ids, o);
    const PretrainResult b = pretrain_source(hfr::net::BackboneConfig{}, d, ids, o);
    CHECK(same_weights(a.model, b.model));
    CHECK_FALSE(same_weights(a.model, hfr::net::build(hfr::net::BackboneConfig{}, o.init_seed)));
    CHECK(a.log.steps.size() == steps_per_epoch(6, 2, 4));
    for (const auto& s : a.log.steps) {
        CHECK(s.l_sdl == 0.0);
        CHECK(s.l_total == s.l_c);
    }
    for (const auto& p : a.model.params()) CHECK_FALSE(p.trainable);
}
