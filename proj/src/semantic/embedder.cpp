#include "glow/semantic/embedder.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "glow/core/rng.hpp"

namespace glow::semantic {

namespace {
// Fixed seed of the builtin embedding table; part of the on-disk contract.
constexpr uint64_t kTableSeed = 0x67C0FFEE5EEDULL;

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(
                std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}
}  // namespace

Tensor bucket_vector(int64_t bucket, const EmbedderConfig& cfg) {
    Rng rng(derive_seed(kTableSeed, static_cast<uint64_t>(bucket)));
    Tensor v({cfg.text_dim});
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg.text_dim));
    for (auto& x : v.data) x = s * rng.normal();
    return v;
}

CaptionEmbedding embed_caption(const std::string& text,
                               const EmbedderConfig& cfg) {
    cfg.validate();
    CaptionEmbedding e;
    e.caption_text = text;
    e.source = EmbeddingSource::builtin_hash;
    auto words = tokenize(text);
    if (words.empty()) {
        e.is_null = true;
        e.tokens = Tensor::zeros({1, cfg.text_dim});
        return e;
    }
    if (static_cast<int64_t>(words.size()) > cfg.max_tokens)
        words.resize(static_cast<size_t>(cfg.max_tokens));
    e.tokens = Tensor({static_cast<int64_t>(words.size()), cfg.text_dim});
    for (size_t i = 0; i < words.size(); ++i) {
        const int64_t bucket = static_cast<int64_t>(
            fnv1a64(words[i]) % static_cast<uint64_t>(cfg.vocab_hash_buckets));
        Tensor v = bucket_vector(bucket, cfg);
        std::copy(v.data.begin(), v.data.end(),
                  e.tokens.data.begin() + static_cast<int64_t>(i) * cfg.text_dim);
    }
    return e;
}

std::map<std::string, CaptionEmbedding> load_external_embeddings(
    const std::string& path, const blur::DatasetManifest& manifest,
    const EmbedderConfig& cfg, std::vector<std::string>* warnings) {
    cfg.validate();
    std::ifstream f(path);
    GLOW_CHECK_IO(f.good(), "cannot read embeddings file ", path);

    std::map<std::string, CaptionEmbedding> loaded;
    std::string line;
    int64_t lineno = 0;
    auto warn = [&](const std::string& msg) {
        if (warnings) warnings->push_back(msg);
    };
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string id = "<line " + std::to_string(lineno) + ">";
        try {
            auto j = nlohmann::json::parse(line);
            id = j.at("id").get<std::string>();
            const auto& tk = j.at("tokens");
            GLOW_CHECK(tk.is_array() && !tk.empty(), "tokens must be a nonempty array");
            Tensor t({static_cast<int64_t>(tk.size()), cfg.text_dim});
            int64_t row = 0;
            for (const auto& rowj : tk) {
                GLOW_CHECK(static_cast<int64_t>(rowj.size()) == cfg.text_dim,
                           "token dim ", rowj.size(), " != text_dim ", cfg.text_dim);
                for (int64_t c = 0; c < cfg.text_dim; ++c) {
                    const double v = rowj.at(static_cast<size_t>(c)).get<double>();
                    GLOW_CHECK(std::isfinite(v), "non-finite embedding value");
                    t[row * cfg.text_dim + c] = v;
                }
                ++row;
            }
            CaptionEmbedding e;
            e.tokens = std::move(t);
            e.source = EmbeddingSource::external_file;
            loaded[id] = std::move(e);
        } catch (const std::exception& ex) {
            warn("rejected embedding record " + id + ": " + ex.what());
        }
    }

    // Fill the manifest id set; missing ids fall back to the builtin embedder.
    std::map<std::string, CaptionEmbedding> out;
    for (const auto& s : manifest.samples) {
        auto it = loaded.find(s.id);
        if (it != loaded.end()) {
            out[s.id] = it->second;
            out[s.id].caption_text = s.caption;
        } else {
            warn("no external embedding for id " + s.id +
                 "; falling back to builtin embedder");
            out[s.id] = embed_caption(s.caption, cfg);
        }
    }
    return out;
}

void save_embeddings_jsonl(
    const std::string& path,
    const std::map<std::string, CaptionEmbedding>& embeddings) {
    std::ofstream f(path, std::ios::binary);
    GLOW_CHECK_IO(f.good(), "cannot write embeddings file ", path);
    for (const auto& [id, e] : embeddings) {
        nlohmann::ordered_json j;
        j["id"] = id;
        auto rows = nlohmann::ordered_json::array();
        for (int64_t r = 0; r < e.tokens.dim(0); ++r) {
            auto row = nlohmann::ordered_json::array();
            for (int64_t c = 0; c < e.tokens.dim(1); ++c)
                row.push_back(e.tokens[r * e.tokens.dim(1) + c]);
            rows.push_back(std::move(row));
        }
        j["tokens"] = std::move(rows);
        f << j.dump() << "\n";
    }
}

}  // namespace glow::semantic
