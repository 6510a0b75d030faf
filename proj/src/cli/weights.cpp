#include "hfr/cli/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace hfr::cli {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > UINT32_MAX) throw WeightsError(std::string(what) + " exceeds 32 bits");
    return static_cast<std::uint32_t>(v);
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) throw WeightsError(std::string("truncated weights file while reading ") + what);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return bytes_[pos_++];
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    double f32(const char* what) { return static_cast<double>(std::bit_cast<float>(u32(what))); }
    std::string text(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const net::Model& model) {
    std::vector<std::uint8_t> out(std::begin(kWeightsMagic), std::end(kWeightsMagic));
    put_u32(out, kWeightsVersion);
    put_u32(out, checked_u32(model.params().size(), "tensor count"));
    for (const auto& p : model.params()) {
        put_u32(out, checked_u32(p.name.size(), "name length"));
        out.insert(out.end(), p.name.begin(), p.name.end());
        out.push_back(static_cast<std::uint8_t>(p.group));
        put_u32(out, checked_u32(p.tensor.rank(), "rank"));
        for (std::size_t d : p.tensor.shape()) put_u32(out, checked_u32(d, "dimension"));
        for (double v : p.tensor.data()) put_f32(out, v);
    }
    return out;
}

net::Model deserialize(const std::vector<std::uint8_t>& bytes, const net::BackboneConfig& config) {
    Reader in(bytes);
    if (in.text(4, "magic") != std::string(kWeightsMagic, 4)) throw WeightsError("bad magic: not a weights file");
    const std::uint32_t version = in.u32("version");
    if (version != kWeightsVersion) throw WeightsError("unsupported weights version " + std::to_string(version));
    net::Model model = net::build(config, 0);
    const std::uint32_t count = in.u32("tensor count");
    if (count != model.params().size()) {
        throw WeightsError("file holds " + std::to_string(count) + " tensors, config expects " +
                           std::to_string(model.params().size()));
    }
    for (auto& p : model.params()) {
        const std::string name = in.text(in.u32("name length"), "name");
        if (name != p.name) throw WeightsError("expected tensor '" + p.name + "', found '" + name + "'");
        const std::uint8_t group = in.u8("group");
        if (group != static_cast<std::uint8_t>(p.group)) throw WeightsError("group mismatch for " + name);
        const std::uint32_t rank = in.u32("rank");
        grad::Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(in.u32("dimension"));
        if (shape != p.tensor.shape()) {
            throw WeightsError("shape mismatch for " + name + ": file " + grad::shape_to_string(shape) + ", config " +
                               grad::shape_to_string(p.tensor.shape()));
        }
        in.need(4 * p.tensor.numel(), "values");
        for (auto& v : p.tensor.data()) v = in.f32("values");
    }
    if (!in.done()) throw WeightsError("trailing bytes after last tensor");
    return model;
}

void save_weights(const net::Model& model, const std::filesystem::path& path) {
    const auto bytes = serialize(model);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw WeightsError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw WeightsError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

net::Model load_weights(const std::filesystem::path& path, const net::BackboneConfig& config) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WeightsError("cannot open weights file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes, config);
}

void round_to_float32(net::Model& model) {
    for (auto& p : model.params()) {
        for (auto& v : p.tensor.data()) v = static_cast<double>(static_cast<float>(v));
    }
}

}  // namespace hfr::cli
