#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "glow/blur/dataset.hpp"
#include "glow/core/tensor.hpp"

namespace glow::semantic {

struct EmbedderConfig {
    int64_t text_dim = 32;
    int64_t max_tokens = 8;
    int64_t vocab_hash_buckets = 4096;

    void validate() const {
        GLOW_CHECK_CFG(max_tokens >= 1, "embedder: max_tokens must be >= 1");
        GLOW_CHECK_CFG(text_dim >= 1 && vocab_hash_buckets >= 1,
                       "embedder: bad dimensions");
    }
};

enum class EmbeddingSource { builtin_hash, external_file };

struct CaptionEmbedding {
    Tensor tokens;  // [M, text_dim], M >= 1
    EmbeddingSource source = EmbeddingSource::builtin_hash;
    std::string caption_text;
    bool is_null = false;  // empty caption; model substitutes its learned null token

    int64_t n_tokens() const { return tokens.dim(0); }
};

// Hashed bag-of-words embedder: lowercase, whitespace-tokenize, FNV-1a hash
// each word into a bucket, look up a fixed seeded vector per bucket. Fully
// deterministic across runs and platforms; no stored table.
CaptionEmbedding embed_caption(const std::string& text,
                               const EmbedderConfig& cfg);

// The fixed per-bucket vector (exposed for tests and for the null token
// substitution path).
Tensor bucket_vector(int64_t bucket, const EmbedderConfig& cfg);

// JSON-lines external embedding file: one {"id": ..., "tokens": [[...]...]}
// record per line. Invalid records are rejected individually (id reported in
// the warning log); manifest ids missing from the file fall back to the
// builtin embedder with a logged warning.
std::map<std::string, CaptionEmbedding> load_external_embeddings(
    const std::string& path, const blur::DatasetManifest& manifest,
    const EmbedderConfig& cfg, std::vector<std::string>* warnings = nullptr);

void save_embeddings_jsonl(
    const std::string& path,
    const std::map<std::string, CaptionEmbedding>& embeddings);

}  // namespace glow::semantic
