#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "glow/blur/synthesis.hpp"
#include "glow/core/image.hpp"

namespace glow::blur {

struct SampleRecord {
    std::string id;
    std::string blurred_path;  // relative to the manifest directory
    std::string sharp_path;
    std::string caption;
    BlurSpec spec;
    // Trajectory summary (consistent with the stored spec).
    double mean_dx = 0.0;
    double mean_dy = 0.0;
    double dominant_angle_deg = 0.0;
};

struct DatasetManifest {
    std::string version = "1";
    uint64_t seed = 0;
    std::vector<SampleRecord> samples;
    std::vector<std::string> skipped;  // per-sample skip log (unreadable sources)
    std::string dir;  // directory the manifest was loaded from / written to

    std::string resolve(const std::string& rel) const;
    void validate() const;
};

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text,
                                   const std::string& dir);
void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Materializes blurred/sharp pairs under out_dir and writes
// out_dir/manifest.json. Source PNGs are discovered in source_dir (sorted by
// filename); spec k = specs[i % specs.size()] is instantiated for source i
// round-robin; per-sample RNG seed is derived from (master seed, sample id).
// Optional captions override the generated per-spec caption by source
// filename. Unreadable sources are skipped and recorded.
DatasetManifest build_dataset(const std::string& out_dir,
                              const std::string& source_dir,
                              const std::vector<BlurSpec>& specs,
                              const std::map<std::string, std::string>& captions,
                              uint64_t seed);

// In-memory variant used by tests and the training pipeline when sources are
// procedurally generated: images[i] plays the role of source file i.
DatasetManifest build_dataset_from_images(
    const std::string& out_dir, const std::vector<ImageGrid>& sources,
    const std::vector<std::string>& source_names,
    const std::vector<BlurSpec>& specs,
    const std::map<std::string, std::string>& captions, uint64_t seed);

std::string default_caption(const BlurSpec& spec);

}  // namespace glow::blur
