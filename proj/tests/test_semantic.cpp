#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "glow/blur/dataset.hpp"
#include "glow/core/image.hpp"
#include "glow/semantic/embedder.hpp"

using namespace glow;
using namespace glow::semantic;
namespace fs = std::filesystem;

namespace {
std::string temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("glow_sem_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}
}  // namespace

TEST_CASE("embed_caption basics") {
    EmbedderConfig cfg;
    cfg.text_dim = 16;
    cfg.max_tokens = 4;

    // empty caption: single null token
    CaptionEmbedding e = embed_caption("", cfg);
    CHECK(e.is_null);
    CHECK(e.tokens.dim(0) == 1);
    CHECK(e.tokens.dim(1) == 16);

    // determinism
    CaptionEmbedding a = embed_caption("Sharp Photo", cfg);
    CaptionEmbedding b = embed_caption("Sharp Photo", cfg);
    REQUIRE(a.tokens.numel() == b.tokens.numel());
    for (int64_t i = 0; i < a.tokens.numel(); ++i)
        CHECK(a.tokens[i] == b.tokens[i]);

    // word order swaps token rows but keeps the multiset
    CaptionEmbedding rc = embed_caption("red car", cfg);
    CaptionEmbedding cr = embed_caption("car red", cfg);
    REQUIRE(rc.tokens.dim(0) == 2);
    for (int64_t c = 0; c < 16; ++c) {
        CHECK(rc.tokens.at2(0, c) == cr.tokens.at2(1, c));
        CHECK(rc.tokens.at2(1, c) == cr.tokens.at2(0, c));
    }

    // case folding: same tokens regardless of case
    CaptionEmbedding lower = embed_caption("red", cfg);
    CaptionEmbedding upper = embed_caption("RED", cfg);
    for (int64_t i = 0; i < 16; ++i) CHECK(lower.tokens[i] == upper.tokens[i]);

    // truncation to max_tokens
    CaptionEmbedding many = embed_caption("a b c d e f g", cfg);
    CHECK(many.tokens.dim(0) == 4);
}

TEST_CASE("external embeddings: round trip, fallbacks, per-record isolation") {
    EmbedderConfig cfg;
    cfg.text_dim = 8;

    // build a small manifest
    std::string src = temp_dir("src");
    for (int i = 0; i < 3; ++i)
        write_png(make_texture(16, 16, 1, 60 + i),
                  src + "/img_" + std::to_string(i) + ".png");
    std::vector<blur::BlurSpec> specs(1);
    specs[0].family = blur::BlurFamily::identity;
    blur::DatasetManifest m =
        blur::build_dataset(temp_dir("ds"), src, specs, {}, 3);

    // save builtin embeddings then reload: bitwise-equal arrays, no fallbacks
    std::map<std::string, CaptionEmbedding> embs;
    for (const auto& s : m.samples) embs[s.id] = embed_caption(s.caption, cfg);
    std::string file = temp_dir("emb") + "/e.jsonl";
    save_embeddings_jsonl(file, embs);
    std::vector<std::string> warnings;
    auto loaded = load_external_embeddings(file, m, cfg, &warnings);
    CHECK(warnings.empty());
    for (const auto& s : m.samples) {
        const auto& orig = embs[s.id];
        const auto& got = loaded[s.id];
        REQUIRE(got.tokens.numel() == orig.tokens.numel());
        for (int64_t i = 0; i < orig.tokens.numel(); ++i)
            CHECK(got.tokens[i] == orig.tokens[i]);
        CHECK(got.source == EmbeddingSource::external_file);
    }

    // one wrong-dimension record: that id falls back, others load
    {
        std::ofstream f(file);
        f << R"({"id":"s0000","tokens":[[1,2,3]]})" << "\n";  // wrong dim
        f << R"({"id":"s0001","tokens":[[1,2,3,4,5,6,7,8]]})" << "\n";
    }
    warnings.clear();
    loaded = load_external_embeddings(file, m, cfg, &warnings);
    CHECK(loaded["s0001"].source == EmbeddingSource::external_file);
    CHECK(loaded["s0000"].source == EmbeddingSource::builtin_hash);
    CHECK(loaded["s0002"].source == EmbeddingSource::builtin_hash);
    bool named = false;
    for (const auto& w : warnings)
        if (w.find("s0000") != std::string::npos) named = true;
    CHECK(named);

    CHECK_THROWS_AS(load_external_embeddings("/nonexistent.jsonl", m, cfg),
                    glow::Error);
}
