#include "glow/blur/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>

#include <json.hpp>

#include "glow/core/common.hpp"
#include "glow/core/rng.hpp"

namespace glow::blur {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string DatasetManifest::resolve(const std::string& rel) const {
    if (dir.empty()) return rel;
    return (fs::path(dir) / rel).string();
}

void DatasetManifest::validate() const {
    GLOW_CHECK_CFG(version == "1", "unsupported manifest version '", version, "'");
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    GLOW_CHECK_CFG(std::adjacent_find(ids.begin(), ids.end()) == ids.end(),
                   "manifest sample ids are not unique");
    for (const auto& s : samples) {
        GLOW_CHECK_IO(fs::exists(resolve(s.blurred_path)), "missing file ",
                      resolve(s.blurred_path));
        GLOW_CHECK_IO(fs::exists(resolve(s.sharp_path)), "missing file ",
                      resolve(s.sharp_path));
        // Summary must be reproducible from the stored spec and seed scheme.
        if (s.spec.family == BlurFamily::gaussian ||
            s.spec.family == BlurFamily::identity) {
            GLOW_CHECK_CFG(std::abs(s.mean_dx) < 1e-6 && std::abs(s.mean_dy) < 1e-6,
                           "sample ", s.id, ": nonzero summary for static blur");
            continue;
        }
        Trajectory t = make_trajectory(s.spec, derive_seed(seed, s.id));
        const auto m = t.mean_offset();
        GLOW_CHECK_CFG(std::abs(m[0] - s.mean_dx) < 1e-6 &&
                           std::abs(m[1] - s.mean_dy) < 1e-6,
                       "sample ", s.id, ": trajectory summary inconsistent");
    }
}

std::string default_caption(const BlurSpec& spec) {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.1f", v);
        return std::string(buf);
    };
    switch (spec.family) {
        case BlurFamily::linear:
            return "photo with linear motion blur at angle " +
                   fmt(spec.angle_deg) + " degrees, magnitude " +
                   fmt(spec.magnitude_px) + " pixels";
        case BlurFamily::shake:
            return "photo with camera shake blur, path length " +
                   fmt(spec.magnitude_px) + " pixels";
        case BlurFamily::gaussian:
            return "photo with gaussian blur, sigma " + fmt(spec.sigma);
        case BlurFamily::identity:
            return "sharp photo without blur";
    }
    return "";
}

namespace {

ordered_json spec_to_json(const BlurSpec& s) {
    ordered_json j;
    j["family"] = family_name(s.family);
    j["angle_deg"] = s.angle_deg;
    j["magnitude_px"] = s.magnitude_px;
    j["sigma"] = s.sigma;
    j["n_samples"] = s.n_samples;
    j["seed"] = s.seed;
    return j;
}

BlurSpec spec_from_json(const ordered_json& j) {
    BlurSpec s;
    s.family = family_from_name(j.at("family").get<std::string>());
    s.angle_deg = j.at("angle_deg").get<double>();
    s.magnitude_px = j.at("magnitude_px").get<double>();
    s.sigma = j.at("sigma").get<double>();
    s.n_samples = j.at("n_samples").get<int64_t>();
    s.seed = j.at("seed").get<uint64_t>();
    return s;
}

}  // namespace

std::string manifest_to_json(const DatasetManifest& m) {
    ordered_json j;
    j["version"] = m.version;
    j["seed"] = m.seed;
    j["samples"] = ordered_json::array();
    for (const auto& s : m.samples) {
        ordered_json js;
        js["id"] = s.id;
        js["blurred_path"] = s.blurred_path;
        js["sharp_path"] = s.sharp_path;
        js["caption"] = s.caption;
        js["spec"] = spec_to_json(s.spec);
        js["trajectory_summary"] = {{"mean_dx", s.mean_dx},
                                    {"mean_dy", s.mean_dy},
                                    {"dominant_angle_deg", s.dominant_angle_deg}};
        j["samples"].push_back(std::move(js));
    }
    j["skipped"] = m.skipped;
    return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text,
                                   const std::string& dir) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        GLOW_CHECK_CFG(false, "manifest parse error: ", e.what());
    }
    DatasetManifest m;
    m.dir = dir;
    m.version = j.at("version").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& js : j.at("samples")) {
        SampleRecord s;
        s.id = js.at("id").get<std::string>();
        s.blurred_path = js.at("blurred_path").get<std::string>();
        s.sharp_path = js.at("sharp_path").get<std::string>();
        s.caption = js.at("caption").get<std::string>();
        s.spec = spec_from_json(js.at("spec"));
        const auto& ts = js.at("trajectory_summary");
        s.mean_dx = ts.at("mean_dx").get<double>();
        s.mean_dy = ts.at("mean_dy").get<double>();
        s.dominant_angle_deg = ts.at("dominant_angle_deg").get<double>();
        m.samples.push_back(std::move(s));
    }
    if (j.contains("skipped"))
        m.skipped = j.at("skipped").get<std::vector<std::string>>();
    return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    GLOW_CHECK_IO(f.good(), "cannot write manifest ", path);
    f << manifest_to_json(m);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    GLOW_CHECK_IO(f.good(), "cannot read manifest ", path);
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    return manifest_from_json(text, fs::path(path).parent_path().string());
}

DatasetManifest build_dataset_from_images(
    const std::string& out_dir, const std::vector<ImageGrid>& sources,
    const std::vector<std::string>& source_names,
    const std::vector<BlurSpec>& specs,
    const std::map<std::string, std::string>& captions, uint64_t seed) {
    GLOW_CHECK_CFG(!specs.empty(), "build_dataset: no blur specs given");
    GLOW_CHECK_CFG(sources.size() == source_names.size(),
                   "build_dataset: source/name count mismatch");
    for (const auto& s : specs) s.validate();
    GLOW_CHECK_CFG(!sources.empty(), "build_dataset: empty source set");

    fs::create_directories(fs::path(out_dir) / "blurred");
    fs::create_directories(fs::path(out_dir) / "sharp");

    DatasetManifest m;
    m.seed = seed;
    m.dir = out_dir;
    m.samples.resize(sources.size());

    const int64_t n = static_cast<int64_t>(sources.size());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "s%04lld",
                      static_cast<long long>(i));
        SampleRecord rec;
        rec.id = idbuf;
        rec.spec = specs[static_cast<size_t>(i) % specs.size()];
        rec.blurred_path = std::string("blurred/") + idbuf + ".png";
        rec.sharp_path = std::string("sharp/") + idbuf + ".png";
        auto cit = captions.find(source_names[static_cast<size_t>(i)]);
        rec.caption = cit != captions.end() ? cit->second
                                            : default_caption(rec.spec);
        Trajectory traj;
        const uint64_t sample_seed = derive_seed(seed, rec.id);
        ImageGrid blurred =
            apply_spec(sources[static_cast<size_t>(i)], rec.spec, sample_seed, &traj);
        if (rec.spec.family == BlurFamily::linear ||
            rec.spec.family == BlurFamily::shake) {
            const auto mo = traj.mean_offset();
            rec.mean_dx = mo[0];
            rec.mean_dy = mo[1];
            rec.dominant_angle_deg =
                fold_angle_deg(std::atan2(mo[1], mo[0]) * 180.0 /
                               3.14159265358979323846);
        }
        write_png(blurred, (fs::path(out_dir) / rec.blurred_path).string());
        write_png(sources[static_cast<size_t>(i)],
                  (fs::path(out_dir) / rec.sharp_path).string());
        m.samples[static_cast<size_t>(i)] = std::move(rec);
    }

    GLOW_CHECK_CFG(!m.samples.empty(), "build_dataset: produced no samples");
    save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
    return m;
}

DatasetManifest build_dataset(const std::string& out_dir,
                              const std::string& source_dir,
                              const std::vector<BlurSpec>& specs,
                              const std::map<std::string, std::string>& captions,
                              uint64_t seed) {
    GLOW_CHECK_IO(fs::is_directory(source_dir), "source dir not found: ",
                  source_dir);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(source_dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            files.push_back(e.path().string());
    std::sort(files.begin(), files.end());

    std::vector<ImageGrid> sources;
    std::vector<std::string> names;
    std::vector<std::string> skipped;
    for (const auto& f : files) {
        try {
            sources.push_back(read_png(f));
            names.push_back(fs::path(f).filename().string());
        } catch (const Error& e) {
            skipped.push_back(fs::path(f).filename().string() + ": " + e.what());
        }
    }
    GLOW_CHECK_CFG(!sources.empty(), "build_dataset: no readable sources in ",
                   source_dir);
    DatasetManifest m = build_dataset_from_images(out_dir, sources, names,
                                                  specs, captions, seed);
    if (!skipped.empty()) {
        m.skipped = skipped;
        save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
    }
    return m;
}

}  // namespace glow::blur
