#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "glow/core/nn.hpp"
#include "glow/core/tensor.hpp"

namespace glow {

// Single-file binary container: magic, JSON header (config echo, append-only
// stage provenance, rng state, tensor directory), then raw float64 data.
// Loading and saving the same file is byte-stable.
struct Checkpoint {
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    nlohmann::ordered_json provenance = nlohmann::ordered_json::array();
    uint64_t rng_state = 0;
    std::vector<std::pair<std::string, Tensor>> arrays;

    static Checkpoint load(const std::string& path);
    void save(const std::string& path) const;

    const Tensor* find(const std::string& name) const;
    void put(const std::string& name, Tensor t);

    // FNV-1a over the serialized bytes; used in report provenance.
    std::string content_hash() const;

    std::vector<unsigned char> serialize() const;
    static Checkpoint deserialize(const unsigned char* data, size_t size);
};

// Copies every parameter of the store into the checkpoint as prefix + name.
void pack_store(Checkpoint& ckpt, const std::string& prefix,
                const nn::ParamStore& store);

// Restores parameters by name; every parameter must be present with a
// matching shape.
void unpack_store(const Checkpoint& ckpt, const std::string& prefix,
                  nn::ParamStore& store);

}  // namespace glow
