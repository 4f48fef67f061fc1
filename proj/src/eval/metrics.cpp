#include "glow/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "glow/core/common.hpp"

namespace glow::eval {

double psnr(const ImageGrid& a, const ImageGrid& b) {
    GLOW_CHECK(a.same_dims(b), "psnr: dimension mismatch");
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a.data[static_cast<size_t>(i)] - b.data[static_cast<size_t>(i)];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace {
constexpr int kWin = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (k1 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> ssim_window() {
    std::vector<double> w(kWin);
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = static_cast<double>(i - kWin / 2);
        w[static_cast<size_t>(i)] = std::exp(-0.5 * d * d / (kSsimSigma * kSsimSigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Separable Gaussian filter, valid region only.
ImageGrid ssim_filter(const ImageGrid& x) {
    static const std::vector<double> w = ssim_window();
    const int64_t hw = kWin / 2;
    ImageGrid tmp(x.h, x.w - 2 * hw, 1);
    for (int64_t y = 0; y < x.h; ++y)
        for (int64_t xc = 0; xc < tmp.w; ++xc) {
            double acc = 0.0;
            for (int i = 0; i < kWin; ++i)
                acc += w[static_cast<size_t>(i)] * x.at(y, xc + i, 0);
            tmp.at(y, xc, 0) = acc;
        }
    ImageGrid out(x.h - 2 * hw, tmp.w, 1);
    for (int64_t y = 0; y < out.h; ++y)
        for (int64_t xc = 0; xc < out.w; ++xc) {
            double acc = 0.0;
            for (int i = 0; i < kWin; ++i)
                acc += w[static_cast<size_t>(i)] * tmp.at(y + i, xc, 0);
            out.at(y, xc, 0) = acc;
        }
    return out;
}

ImageGrid pixel_product(const ImageGrid& a, const ImageGrid& b) {
    ImageGrid out(a.h, a.w, 1);
    for (int64_t i = 0; i < a.numel(); ++i)
        out.data[static_cast<size_t>(i)] =
            a.data[static_cast<size_t>(i)] * b.data[static_cast<size_t>(i)];
    return out;
}
}  // namespace

double ssim(const ImageGrid& a_in, const ImageGrid& b_in) {
    GLOW_CHECK(a_in.same_dims(b_in), "ssim: dimension mismatch");
    GLOW_CHECK(a_in.h >= kWin && a_in.w >= kWin,
               "ssim: image smaller than the ", kWin, "x", kWin, " window");
    const ImageGrid a = to_gray(a_in);
    const ImageGrid b = to_gray(b_in);

    const ImageGrid mu_a = ssim_filter(a);
    const ImageGrid mu_b = ssim_filter(b);
    const ImageGrid aa = ssim_filter(pixel_product(a, a));
    const ImageGrid bb = ssim_filter(pixel_product(b, b));
    const ImageGrid ab = ssim_filter(pixel_product(a, b));

    double acc = 0.0;
    for (int64_t i = 0; i < mu_a.numel(); ++i) {
        const double ma = mu_a.data[static_cast<size_t>(i)];
        const double mb = mu_b.data[static_cast<size_t>(i)];
        const double va = aa.data[static_cast<size_t>(i)] - ma * ma;
        const double vb = bb.data[static_cast<size_t>(i)] - mb * mb;
        const double cov = ab.data[static_cast<size_t>(i)] - ma * mb;
        const double num = (2.0 * ma * mb + kC1) * (2.0 * cov + kC2);
        const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
        acc += num / den;
    }
    return acc / static_cast<double>(mu_a.numel());
}

double sharpness_proxy(const ImageGrid& a_in) {
    const ImageGrid a = to_gray(a_in);
    if (a.h < 3 || a.w < 3) return 0.0;
    std::vector<double> resp;
    resp.reserve(static_cast<size_t>((a.h - 2) * (a.w - 2)));
    for (int64_t y = 1; y + 1 < a.h; ++y)
        for (int64_t x = 1; x + 1 < a.w; ++x)
            resp.push_back(a.at(y - 1, x, 0) + a.at(y + 1, x, 0) +
                           a.at(y, x - 1, 0) + a.at(y, x + 1, 0) -
                           4.0 * a.at(y, x, 0));
    double mean = std::accumulate(resp.begin(), resp.end(), 0.0) /
                  static_cast<double>(resp.size());
    double var = 0.0;
    for (double v : resp) var += (v - mean) * (v - mean);
    return var / static_cast<double>(resp.size());
}

void MetricReport::finalize() {
    GLOW_CHECK(!per_sample.empty(), "metric report without samples");
    mean_psnr = mean_ssim = mean_sharpness = 0.0;
    for (const auto& s : per_sample) {
        mean_psnr += s.psnr_db;
        mean_ssim += s.ssim;
        mean_sharpness += s.sharpness_proxy;
    }
    const double inv = 1.0 / static_cast<double>(per_sample.size());
    mean_psnr *= inv;
    mean_ssim *= inv;
    mean_sharpness *= inv;
}

std::string report_to_json(const MetricReport& r) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["model_id"] = r.model_id;
    j["dataset_id"] = r.dataset_id;
    j["per_sample"] = nlohmann::ordered_json::array();
    for (const auto& s : r.per_sample)
        j["per_sample"].push_back({{"id", s.id},
                                   {"psnr_db", s.psnr_db},
                                   {"ssim", s.ssim},
                                   {"sharpness_proxy", s.sharpness_proxy}});
    j["aggregate"] = {{"mean_psnr_db", r.mean_psnr},
                      {"mean_ssim", r.mean_ssim},
                      {"mean_sharpness_proxy", r.mean_sharpness}};
    j["provenance"] = {{"ckpt_hash", r.ckpt_hash}, {"seed", r.seed}};
    return j.dump(2) + "\n";
}

std::string report_to_table(const MetricReport& r) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "model %s on %s (%zu samples)\n",
                  r.model_id.c_str(), r.dataset_id.c_str(), r.per_sample.size());
    os << line;
    std::snprintf(line, sizeof(line), "%-10s %10s %8s %12s\n", "id", "psnr_db",
                  "ssim", "sharpness");
    os << line;
    for (const auto& s : r.per_sample) {
        std::snprintf(line, sizeof(line), "%-10s %10.3f %8.4f %12.5f\n",
                      s.id.c_str(), s.psnr_db, s.ssim, s.sharpness_proxy);
        os << line;
    }
    std::snprintf(line, sizeof(line), "%-10s %10.3f %8.4f %12.5f\n", "mean",
                  r.mean_psnr, r.mean_ssim, r.mean_sharpness);
    os << line;
    return os.str();
}

std::map<std::string, double> CrossMatrix::off_diagonal_drop() const {
    std::map<std::string, double> drops;
    for (size_t r = 0; r < row_names.size(); ++r) {
        auto it = std::find(col_names.begin(), col_names.end(), row_names[r]);
        if (it == col_names.end()) continue;
        const size_t diag = static_cast<size_t>(it - col_names.begin());
        double off = 0.0;
        int64_t cnt = 0;
        for (size_t c = 0; c < col_names.size(); ++c) {
            if (c == diag) continue;
            off += at(r, c).psnr_db;
            ++cnt;
        }
        if (cnt > 0)
            drops[row_names[r]] =
                at(r, diag).psnr_db - off / static_cast<double>(cnt);
    }
    return drops;
}

CrossMatrix cross_matrix(const std::vector<std::string>& models,
                         const std::vector<std::string>& tests,
                         const CellEvaluator& evaluate) {
    GLOW_CHECK_CFG(!models.empty() && !tests.empty(),
                   "cross_matrix: empty model or test list");
    CrossMatrix m;
    m.row_names = models;
    m.col_names = tests;
    m.cells.resize(models.size() * tests.size());
    for (size_t r = 0; r < models.size(); ++r)
        for (size_t c = 0; c < tests.size(); ++c) {
            try {
                m.cells[r * tests.size() + c] = evaluate(models[r], tests[c]);
            } catch (const Error& e) {
                GLOW_CHECK_CFG(false, "cross_matrix cell (", models[r], ", ",
                               tests[c], ") failed: ", e.what());
            }
        }
    return m;
}

std::string cross_matrix_to_json(const CrossMatrix& m) {
    nlohmann::ordered_json j;
    j["rows"] = m.row_names;
    j["cols"] = m.col_names;
    j["cells"] = nlohmann::ordered_json::array();
    for (size_t r = 0; r < m.row_names.size(); ++r) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (size_t c = 0; c < m.col_names.size(); ++c) {
            const auto& cell = m.at(r, c);
            row.push_back({{"psnr_db", cell.psnr_db},
                           {"ssim", cell.ssim},
                           {"diagonal", m.row_names[r] == m.col_names[c]}});
        }
        j["cells"].push_back(std::move(row));
    }
    nlohmann::ordered_json drops;
    for (const auto& [k, v] : m.off_diagonal_drop()) drops[k] = v;
    j["off_diagonal_psnr_drop"] = std::move(drops);
    return j.dump(2) + "\n";
}

std::string cross_matrix_to_table(const CrossMatrix& m) {
    std::ostringstream os;
    os << "train \\ test";
    for (const auto& c : m.col_names) os << "  " << c;
    os << "\n";
    char buf[64];
    for (size_t r = 0; r < m.row_names.size(); ++r) {
        os << m.row_names[r];
        for (size_t c = 0; c < m.col_names.size(); ++c) {
            std::snprintf(buf, sizeof(buf), "  %.2f/%.3f%s", m.at(r, c).psnr_db,
                          m.at(r, c).ssim,
                          m.row_names[r] == m.col_names[c] ? "*" : " ");
            os << buf;
        }
        os << "\n";
    }
    return os.str();
}

std::map<std::string, double> rank_scores(
    const std::map<std::string, std::map<std::string, double>>& results,
    const std::map<std::string, Direction>& directions) {
    GLOW_CHECK_CFG(!results.empty(), "rank_scores: no models");
    // All models must share the metric set.
    for (const auto& [model, metrics] : results)
        for (const auto& [metric, dir] : directions)
            GLOW_CHECK_CFG(metrics.count(metric), "rank_scores: model '", model,
                           "' missing metric '", metric, "'");

    std::map<std::string, double> totals;
    for (const auto& [model, _] : results) totals[model] = 0.0;

    for (const auto& [metric, dir] : directions) {
        std::vector<std::pair<double, std::string>> vals;
        for (const auto& [model, metrics] : results)
            vals.push_back({metrics.at(metric), model});
        std::sort(vals.begin(), vals.end(), [&](const auto& a, const auto& b) {
            return dir == Direction::higher_better ? a.first > b.first
                                                   : a.first < b.first;
        });
        // Ties share the mean of the ranks they straddle.
        size_t i = 0;
        while (i < vals.size()) {
            size_t j = i;
            while (j + 1 < vals.size() && vals[j + 1].first == vals[i].first) ++j;
            const double rank =
                (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
            for (size_t t = i; t <= j; ++t) totals[vals[t].second] += rank;
            i = j + 1;
        }
    }
    for (auto& [_, v] : totals) v /= static_cast<double>(directions.size());
    return totals;
}

}  // namespace glow::eval
