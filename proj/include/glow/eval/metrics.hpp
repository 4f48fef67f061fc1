#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "glow/core/image.hpp"

namespace glow::eval {

// 10*log10(1/MSE) over [0,1] intensities; identical images cap at 100 dB.
double psnr(const ImageGrid& a, const ImageGrid& b);

// Single-scale SSIM, 11x11 Gaussian window sigma=1.5, k1=0.01, k2=0.03,
// dynamic range 1. RGB inputs are converted to Rec.601 luma first.
double ssim(const ImageGrid& a, const ImageGrid& b);

// Variance of the 3x3 Laplacian response; higher is sharper. Not scale
// invariant: scaling intensities by c scales the value by c^2.
double sharpness_proxy(const ImageGrid& a);

struct SampleMetrics {
    std::string id;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double sharpness_proxy = 0.0;
};

struct MetricReport {
    std::string model_id;
    std::string dataset_id;
    std::vector<SampleMetrics> per_sample;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_sharpness = 0.0;
    std::string ckpt_hash;
    uint64_t seed = 0;

    void finalize();  // fills the aggregate means
};

std::string report_to_json(const MetricReport& r);
std::string report_to_table(const MetricReport& r);

// Cross-pattern generalization matrix: rows = training families (models),
// cols = test families (manifests).
struct CrossCell {
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct CrossMatrix {
    std::vector<std::string> row_names;  // training families
    std::vector<std::string> col_names;  // test families
    std::vector<CrossCell> cells;        // row-major
    const CrossCell& at(size_t r, size_t c) const {
        return cells[r * col_names.size() + c];
    }
    // Mean diagonal-minus-off-diagonal PSNR drop per row (rows whose name
    // matches a column).
    std::map<std::string, double> off_diagonal_drop() const;
};

// Evaluator maps (model name, test name) to aggregate metrics; injected so the
// matrix logic is independent of the inference stack.
using CellEvaluator =
    std::function<CrossCell(const std::string& model, const std::string& test)>;

CrossMatrix cross_matrix(const std::vector<std::string>& models,
                         const std::vector<std::string>& tests,
                         const CellEvaluator& evaluate);

std::string cross_matrix_to_json(const CrossMatrix& m);
std::string cross_matrix_to_table(const CrossMatrix& m);

// Fig-1b style scoring: rank models per metric (ties share the mean rank,
// direction-aware), then average ranks per model. Lower is better.
enum class Direction { higher_better, lower_better };

std::map<std::string, double> rank_scores(
    const std::map<std::string, std::map<std::string, double>>& results,
    const std::map<std::string, Direction>& directions);

}  // namespace glow::eval
