#pragma once

#include <functional>
#include <string>
#include <vector>

#include "glow/blur/dataset.hpp"
#include "glow/motion/field.hpp"

namespace glow::blur {

// Dataset-level blur pattern statistics: orientation and magnitude
// histograms plus a locality index.
struct PatternHistogram {
    // (bin_center_deg, count); 18 bins of 10 degrees, angles folded mod 180.
    std::vector<std::pair<double, int64_t>> angle_bins;
    // (bin_center_px, count); 1 px bins, top bin clamps.
    std::vector<std::pair<double, int64_t>> magnitude_bins;
    // Mean fraction of the 10x10 patch grid whose per-patch magnitude exceeds
    // half the per-image mean patch magnitude.
    double locality_index = 0.0;

    int64_t angle_mode_bin() const;
    void validate() const;
};

// Per-image motion summary used for binning: mean offset of the field (or the
// manifest ground truth) with magnitude defined as 2*|mean offset| so a
// linear streak of extent m reports magnitude ~m.
struct MotionSummary {
    double angle_deg = 0.0;  // folded into [0,180)
    double magnitude_px = 0.0;
};

using MotionPredictor =
    std::function<motion::MotionField(const ImageGrid& blurred)>;

// use_ground_truth=true reads trajectory summaries from the manifest;
// otherwise a trained motion predictor must be supplied and statistics are
// estimated from the blurred images themselves.
PatternHistogram pattern_stats(const DatasetManifest& manifest,
                               bool use_ground_truth,
                               const MotionPredictor& predictor = nullptr);

std::string pattern_histogram_to_json(const PatternHistogram& h);

}  // namespace glow::blur
