#include "glow/blur/pattern_stats.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "glow/core/common.hpp"

namespace glow::blur {

namespace {
constexpr int64_t kAngleBins = 18;    // 10 degree bins over [0,180)
constexpr int64_t kMagBins = 24;      // 1 px bins, last bin clamps
constexpr int64_t kPatchGrid = 10;

int64_t angle_bin(double folded_deg) {
    int64_t b = static_cast<int64_t>(std::llround(folded_deg / 10.0)) % kAngleBins;
    return b < 0 ? b + kAngleBins : b;
}

int64_t mag_bin(double mag) {
    return std::clamp<int64_t>(static_cast<int64_t>(std::floor(mag)), 0,
                               kMagBins - 1);
}

double patch_locality(const motion::MotionField& field) {
    const int64_t g = std::min<int64_t>(kPatchGrid, std::min(field.h, field.w));
    auto grid = motion::patch_dominant_directions(field, g);
    std::vector<double> mags;
    double mean = 0.0;
    for (const auto& cell : grid.cells) {
        mags.push_back(std::hypot(cell[0], cell[1]));
        mean += mags.back();
    }
    mean /= static_cast<double>(mags.size());
    int64_t above = 0;
    for (double m : mags)
        if (m > 0.5 * mean) ++above;
    return static_cast<double>(above) / static_cast<double>(mags.size());
}
}  // namespace

int64_t PatternHistogram::angle_mode_bin() const {
    int64_t best = 0;
    for (size_t i = 1; i < angle_bins.size(); ++i)
        if (angle_bins[i].second > angle_bins[static_cast<size_t>(best)].second)
            best = static_cast<int64_t>(i);
    return best;
}

void PatternHistogram::validate() const {
    for (size_t i = 1; i < angle_bins.size(); ++i)
        GLOW_CHECK(angle_bins[i].first > angle_bins[i - 1].first,
                   "angle bin centers not increasing");
    for (size_t i = 1; i < magnitude_bins.size(); ++i)
        GLOW_CHECK(magnitude_bins[i].first > magnitude_bins[i - 1].first,
                   "magnitude bin centers not increasing");
    GLOW_CHECK(locality_index >= 0.0 && locality_index <= 1.0,
               "locality index out of range");
}

PatternHistogram pattern_stats(const DatasetManifest& manifest,
                               bool use_ground_truth,
                               const MotionPredictor& predictor) {
    GLOW_CHECK_CFG(use_ground_truth || predictor,
                   "pattern_stats: need ground truth summaries or a motion model");
    GLOW_CHECK_CFG(!manifest.samples.empty(), "pattern_stats: empty manifest");

    PatternHistogram h;
    for (int64_t i = 0; i < kAngleBins; ++i)
        h.angle_bins.push_back({static_cast<double>(i) * 10.0, 0});
    for (int64_t i = 0; i < kMagBins; ++i)
        h.magnitude_bins.push_back({static_cast<double>(i) + 0.5, 0});

    double locality_sum = 0.0;
    for (const auto& s : manifest.samples) {
        MotionSummary ms;
        motion::MotionField field;
        if (use_ground_truth) {
            ms.magnitude_px = 2.0 * std::hypot(s.mean_dx, s.mean_dy);
            ms.angle_deg =
                ms.magnitude_px > 0.0
                    ? fold_angle_deg(std::atan2(s.mean_dy, s.mean_dx) * 180.0 /
                                     3.14159265358979323846)
                    : 0.0;
            // Ground-truth trajectories are applied globally, so the field is
            // spatially constant by construction.
            field = motion::MotionField(kPatchGrid, kPatchGrid);
            for (int64_t y = 0; y < field.h; ++y)
                for (int64_t x = 0; x < field.w; ++x) {
                    field.at(y, x, 0) = s.mean_dx;
                    field.at(y, x, 1) = s.mean_dy;
                }
        } else {
            ImageGrid blurred = read_png(manifest.resolve(s.blurred_path));
            field = predictor(blurred);
            const auto m = field.mean();
            ms.magnitude_px = 2.0 * std::hypot(m[0], m[1]);
            ms.angle_deg =
                ms.magnitude_px > 0.0
                    ? fold_angle_deg(std::atan2(m[1], m[0]) * 180.0 /
                                     3.14159265358979323846)
                    : 0.0;
        }
        h.angle_bins[static_cast<size_t>(angle_bin(ms.angle_deg))].second += 1;
        h.magnitude_bins[static_cast<size_t>(mag_bin(ms.magnitude_px))].second += 1;
        locality_sum += patch_locality(field);
    }
    h.locality_index =
        locality_sum / static_cast<double>(manifest.samples.size());
    h.validate();
    return h;
}

std::string pattern_histogram_to_json(const PatternHistogram& h) {
    nlohmann::ordered_json j;
    j["angle_bins"] = nlohmann::ordered_json::array();
    for (const auto& [c, n] : h.angle_bins)
        j["angle_bins"].push_back({{"center_deg", c}, {"count", n}});
    j["magnitude_bins"] = nlohmann::ordered_json::array();
    for (const auto& [c, n] : h.magnitude_bins)
        j["magnitude_bins"].push_back({{"center_px", c}, {"count", n}});
    j["locality_index"] = h.locality_index;
    return j.dump(2) + "\n";
}

}  // namespace glow::blur
