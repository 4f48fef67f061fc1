#include "glow/core/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "glow/core/rng.hpp"

namespace glow {

namespace {
constexpr char kMagic[8] = {'G', 'L', 'O', 'W', 'C', 'K', 'P', '1'};

void append_u64(std::vector<unsigned char>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}
uint64_t read_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}
}  // namespace

std::vector<unsigned char> Checkpoint::serialize() const {
    nlohmann::ordered_json header;
    header["config"] = config;
    header["provenance"] = provenance;
    header["rng_state"] = rng_state;
    auto dir = nlohmann::ordered_json::array();
    for (const auto& [name, t] : arrays)
        dir.push_back({{"name", name}, {"shape", t.shape}});
    header["tensors"] = std::move(dir);
    const std::string htext = header.dump();

    std::vector<unsigned char> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    append_u64(out, htext.size());
    out.insert(out.end(), htext.begin(), htext.end());
    for (const auto& [name, t] : arrays) {
        const size_t bytes = t.data.size() * sizeof(double);
        const size_t off = out.size();
        out.resize(off + bytes);
        std::memcpy(out.data() + off, t.data.data(), bytes);
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const unsigned char* data, size_t size) {
    GLOW_CHECK_IO(size >= 16 && std::memcmp(data, kMagic, 8) == 0,
                  "not a checkpoint file");
    const uint64_t hlen = read_u64(data + 8);
    GLOW_CHECK_IO(16 + hlen <= size, "truncated checkpoint header");
    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(data + 16, data + 16 + hlen);
    } catch (const std::exception& e) {
        GLOW_CHECK_IO(false, "corrupt checkpoint header: ", e.what());
    }
    Checkpoint ckpt;
    ckpt.config = header.at("config");
    ckpt.provenance = header.at("provenance");
    ckpt.rng_state = header.at("rng_state").get<uint64_t>();
    size_t off = 16 + hlen;
    for (const auto& e : header.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
        Tensor t(shape);
        const size_t bytes = t.data.size() * sizeof(double);
        GLOW_CHECK_IO(off + bytes <= size, "truncated checkpoint data at ", name);
        std::memcpy(t.data.data(), data + off, bytes);
        off += bytes;
        ckpt.arrays.emplace_back(name, std::move(t));
    }
    return ckpt;
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    GLOW_CHECK_IO(f.good(), "cannot read checkpoint ", path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    return deserialize(bytes.data(), bytes.size());
}

void Checkpoint::save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream f(path, std::ios::binary);
    GLOW_CHECK_IO(f.good(), "cannot write checkpoint ", path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : arrays)
        if (n == name) return &t;
    return nullptr;
}

void Checkpoint::put(const std::string& name, Tensor t) {
    for (auto& [n, existing] : arrays)
        if (n == name) {
            existing = std::move(t);
            return;
        }
    arrays.emplace_back(name, std::move(t));
}

std::string Checkpoint::content_hash() const {
    const auto bytes = serialize();
    uint64_t h = fnv1a64(std::string_view(
        reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void pack_store(Checkpoint& ckpt, const std::string& prefix,
                const nn::ParamStore& store) {
    for (const auto& [name, v] : store) ckpt.put(prefix + name, v.val());
}

void unpack_store(const Checkpoint& ckpt, const std::string& prefix,
                  nn::ParamStore& store) {
    for (auto& [name, v] : store) {
        const Tensor* t = ckpt.find(prefix + name);
        GLOW_CHECK_IO(t, "checkpoint missing parameter ", prefix + name);
        GLOW_CHECK_IO(t->shape == v.val().shape, "checkpoint shape mismatch for ",
                      prefix + name, ": got ", shape_str(t->shape), " want ",
                      shape_str(v.val().shape));
        v.val() = *t;
    }
}

}  // namespace glow
