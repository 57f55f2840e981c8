#include "irdseg/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "irdseg/errors.hpp"
#include "irdseg/image_io.hpp"
#include "irdseg/parallel.hpp"
#include "irdseg/prng.hpp"

namespace fs = std::filesystem;

namespace irdseg {

namespace {

struct Bands {
    double bg_base_lo, bg_base_hi;  // background plane base offset range
    double bg_slope;                // max |slope| per axis
    double prim_top;                // nearest allowed primitive depth band start
    double band_width;
    double slot;                    // band_width + min separation
};

Bands layout_bands(const SceneConfig& c) {
    const double span = c.depth_max - c.depth_min;
    Bands b;
    b.bg_slope = 0.025 * span;
    b.bg_base_lo = c.depth_max - 0.125 * span;
    b.bg_base_hi = c.depth_max - 0.075 * span;
    b.band_width = 0.05 * span;
    b.slot = b.band_width + c.min_depth_step;
    // background floor minus the separation gives the first primitive band
    b.prim_top = (b.bg_base_lo - 2.0 * b.bg_slope) - c.min_depth_step;
    return b;
}

}  // namespace

void SceneConfig::validate() const {
    if (height < 16 || width < 16) throw ConfigError("scene: height/width must be >= 16");
    if (n_classes < 2) throw ConfigError("scene: n_classes must be >= 2");
    if (!(depth_min > 0.0) || !(depth_max > depth_min)) {
        throw ConfigError("scene: depth range must be positive and increasing");
    }
    if (min_primitives > max_primitives) throw ConfigError("scene: primitive range inverted");
    if (min_holes > max_holes) throw ConfigError("scene: hole range inverted");
    if (!(hole_radius_min > 0.0) || hole_radius_max < hole_radius_min) {
        throw ConfigError("scene: hole radius range invalid");
    }
    if (ir_noise_sigma < 0.0) throw ConfigError("scene: ir_noise_sigma must be >= 0");
    if (!(min_depth_step > 0.0)) throw ConfigError("scene: min_depth_step must be > 0");
    if (!albedo.empty() && albedo.size() != n_classes) {
        throw ConfigError("scene: albedo list must have one entry per class");
    }
    const Bands b = layout_bands(*this);
    const double deepest_band_floor =
        b.prim_top - (max_primitives > 0 ? static_cast<double>(max_primitives - 1) : 0.0) * b.slot -
        b.band_width;
    if (deepest_band_floor < depth_min) {
        throw ConfigError("scene: depth range too narrow for max_primitives at min_depth_step");
    }
}

std::vector<double> SceneConfig::effective_albedo() const {
    if (!albedo.empty()) return albedo;
    std::vector<double> a(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        a[c] = 40.0 + 180.0 * static_cast<double>(c) / static_cast<double>(n_classes - 1);
    }
    return a;
}

ImageSample generate_scene(const SceneConfig& config, std::uint64_t index) {
    config.validate();
    const std::size_t h = config.height;
    const std::size_t w = config.width;
    const Bands bands = layout_bands(config);
    const std::vector<double> albedo = config.effective_albedo();
    Prng rng(mix_seed(config.seed, index));

    ImageSample s;
    s.labels = Tensor({h, w});
    s.depth_filled_gt = Tensor({h, w});

    // background plane
    const double bg_base = rng.uniform(bands.bg_base_lo, bands.bg_base_hi);
    const double bg_gy = rng.uniform(-bands.bg_slope, bands.bg_slope);
    const double bg_gx = rng.uniform(-bands.bg_slope, bands.bg_slope);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            s.depth_filled_gt.at(y, x) = bg_base + bg_gy * (static_cast<double>(y) / h) +
                                         bg_gx * (static_cast<double>(x) / w);
        }
    }

    // layered primitives in disjoint depth bands, later = nearer
    const std::size_t n_prims =
        static_cast<std::size_t>(rng.uniform_int(config.min_primitives, config.max_primitives));
    for (std::size_t k = 0; k < n_prims; ++k) {
        const bool is_ellipse = rng.coin();
        const double class_id =
            static_cast<double>(rng.uniform_int(1, static_cast<std::uint64_t>(config.n_classes - 1)));
        const double cy = rng.uniform(0.1 * h, 0.9 * h);
        const double cx = rng.uniform(0.1 * w, 0.9 * w);
        const double half_h = rng.uniform(0.08 * h, 0.22 * h);
        const double half_w = rng.uniform(0.08 * w, 0.22 * w);
        // fill bands from the near end so scenes favor high-contrast objects
        const std::size_t band_index = config.max_primitives - 1 - k;
        const double band_hi = bands.prim_top - static_cast<double>(band_index) * bands.slot;
        const double d0 = rng.uniform(band_hi - 0.6 * bands.band_width,
                                      band_hi - 0.4 * bands.band_width);
        const double ay = rng.uniform(-0.2 * bands.band_width, 0.2 * bands.band_width);
        const double ax = rng.uniform(-0.2 * bands.band_width, 0.2 * bands.band_width);

        const std::size_t y_lo = static_cast<std::size_t>(std::max(0.0, std::floor(cy - half_h)));
        const std::size_t y_hi = static_cast<std::size_t>(
            std::min(static_cast<double>(h - 1), std::ceil(cy + half_h)));
        const std::size_t x_lo = static_cast<std::size_t>(std::max(0.0, std::floor(cx - half_w)));
        const std::size_t x_hi = static_cast<std::size_t>(
            std::min(static_cast<double>(w - 1), std::ceil(cx + half_w)));
        for (std::size_t y = y_lo; y <= y_hi; ++y) {
            for (std::size_t x = x_lo; x <= x_hi; ++x) {
                const double ry = (static_cast<double>(y) - cy) / half_h;
                const double rx = (static_cast<double>(x) - cx) / half_w;
                const bool inside = is_ellipse ? (ry * ry + rx * rx <= 1.0)
                                               : (std::abs(ry) <= 1.0 && std::abs(rx) <= 1.0);
                if (!inside) continue;
                const double d = d0 + ay * ((static_cast<double>(y) - cy) / h) +
                                 ax * ((static_cast<double>(x) - cx) / w);
                if (d < s.depth_filled_gt.at(y, x)) {
                    s.depth_filled_gt.at(y, x) = d;
                    s.labels.at(y, x) = class_id;
                }
            }
        }
    }

    // inverse-square infrared falloff plus sensor noise
    s.ir = Tensor({h, w});
    for (std::size_t i = 0; i < h * w; ++i) {
        const double a = albedo[static_cast<std::size_t>(s.labels[i])];
        const double d = s.depth_filled_gt[i];
        const double clean = a / (d * d);
        s.ir[i] = std::max(0.0, clean + config.ir_noise_sigma * rng.normal(0.0, 1.0));
    }

    // circular dropout holes, half of them hugging class boundaries
    s.depth_raw = s.depth_filled_gt;
    std::vector<std::size_t> boundary;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double l = s.labels.at(y, x);
            if ((y + 1 < h && s.labels.at(y + 1, x) != l) ||
                (x + 1 < w && s.labels.at(y, x + 1) != l)) {
                boundary.push_back(y * w + x);
            }
        }
    }
    const std::size_t n_holes =
        static_cast<std::size_t>(rng.uniform_int(config.min_holes, config.max_holes));
    for (std::size_t k = 0; k < n_holes; ++k) {
        const bool near_boundary = rng.coin();
        const double radius = rng.uniform(config.hole_radius_min, config.hole_radius_max);
        double cy, cx;
        if (near_boundary && !boundary.empty()) {
            const std::size_t p = boundary[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::uint64_t>(boundary.size() - 1)))];
            cy = static_cast<double>(p / w) + rng.uniform(-2.0, 2.0);
            cx = static_cast<double>(p % w) + rng.uniform(-2.0, 2.0);
        } else {
            cy = rng.uniform(0.0, static_cast<double>(h - 1));
            cx = rng.uniform(0.0, static_cast<double>(w - 1));
        }
        const std::size_t y_lo = static_cast<std::size_t>(std::max(0.0, std::floor(cy - radius)));
        const std::size_t y_hi = static_cast<std::size_t>(
            std::min(static_cast<double>(h - 1), std::ceil(cy + radius)));
        const std::size_t x_lo = static_cast<std::size_t>(std::max(0.0, std::floor(cx - radius)));
        const std::size_t x_hi = static_cast<std::size_t>(
            std::min(static_cast<double>(w - 1), std::ceil(cx + radius)));
        for (std::size_t y = y_lo; y <= y_hi; ++y) {
            for (std::size_t x = x_lo; x <= x_hi; ++x) {
                const double dy = static_cast<double>(y) - cy;
                const double dx = static_cast<double>(x) - cx;
                if (dy * dy + dx * dx <= radius * radius) s.depth_raw.at(y, x) = 0.0;
            }
        }
    }

    s.mask_missing = Tensor({h, w});
    for (std::size_t i = 0; i < h * w; ++i) {
        s.mask_missing[i] = s.depth_raw[i] == 0.0 ? 1.0 : 0.0;
    }
    return s;
}

namespace {

std::string sample_dir_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06zu", index);
    return buf;
}

std::string scene_config_echo(const SceneConfig& c) {
    std::ostringstream out;
    out.precision(17);
    out << "height = " << c.height << "\n";
    out << "width = " << c.width << "\n";
    out << "n_classes = " << c.n_classes << "\n";
    out << "min_primitives = " << c.min_primitives << "\n";
    out << "max_primitives = " << c.max_primitives << "\n";
    out << "depth_min = " << c.depth_min << "\n";
    out << "depth_max = " << c.depth_max << "\n";
    out << "ir_noise_sigma = " << c.ir_noise_sigma << "\n";
    out << "min_holes = " << c.min_holes << "\n";
    out << "max_holes = " << c.max_holes << "\n";
    out << "hole_radius_min = " << c.hole_radius_min << "\n";
    out << "hole_radius_max = " << c.hole_radius_max << "\n";
    out << "min_depth_step = " << c.min_depth_step << "\n";
    out << "seed = " << c.seed << "\n";
    return out.str();
}

}  // namespace

void write_dataset(const SceneConfig& config, std::size_t count, const std::string& out_dir) {
    config.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory: " + out_dir);

    parallel_for(count, [&](std::size_t i) {
        const ImageSample s = generate_scene(config, i);
        const fs::path dir = fs::path(out_dir) / sample_dir_name(i);
        std::error_code sec;
        fs::create_directories(dir, sec);
        if (sec) throw IoError("cannot create directory: " + dir.string());
        write_pgm16((dir / "ir.pgm").string(), s.ir);
        Tensor millidepth(s.depth_raw.shape());
        for (std::size_t p = 0; p < millidepth.size(); ++p) {
            millidepth[p] = s.depth_raw[p] * 1000.0;
        }
        write_pgm16((dir / "depth.pgm").string(), millidepth);
        write_pgm8((dir / "labels.pgm").string(), s.labels);
        write_pfm((dir / "depth_filled.pfm").string(), s.depth_filled_gt);
    });

    std::ofstream manifest(fs::path(out_dir) / "manifest.txt");
    if (!manifest) throw IoError("cannot write manifest in " + out_dir);
    manifest << "irdseg-dataset 1\n";
    manifest << "count " << count << "\n";
    manifest << scene_config_echo(config);
    if (!manifest) throw IoError("manifest write failed in " + out_dir);
}

std::vector<ImageSample> read_dataset(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::exists(root)) throw IoError("dataset directory does not exist: " + dir);
    const fs::path manifest_path = root / "manifest.txt";
    if (!fs::exists(manifest_path)) {
        if (fs::is_empty(root)) return {};
        throw IoError("missing manifest.txt in " + dir);
    }
    std::ifstream manifest(manifest_path);
    std::string header;
    std::getline(manifest, header);
    if (header != "irdseg-dataset 1") {
        throw IoError(manifest_path.string() + ": unknown format line '" + header + "'");
    }
    std::string count_line;
    std::getline(manifest, count_line);
    std::size_t count = 0;
    if (std::sscanf(count_line.c_str(), "count %zu", &count) != 1) {
        throw IoError(manifest_path.string() + ": bad count line '" + count_line + "'");
    }

    std::vector<ImageSample> samples(count);
    parallel_for(count, [&](std::size_t i) {
        const fs::path sdir = root / sample_dir_name(i);
        ImageSample s;
        s.ir = read_pgm((sdir / "ir.pgm").string());
        Tensor millidepth = read_pgm((sdir / "depth.pgm").string());
        s.depth_raw = Tensor(millidepth.shape());
        for (std::size_t p = 0; p < millidepth.size(); ++p) {
            s.depth_raw[p] = millidepth[p] / 1000.0;
        }
        s.labels = read_pgm((sdir / "labels.pgm").string());
        s.depth_filled_gt = read_pfm((sdir / "depth_filled.pfm").string());
        s.mask_missing = Tensor(s.depth_raw.shape());
        for (std::size_t p = 0; p < s.depth_raw.size(); ++p) {
            s.mask_missing[p] = s.depth_raw[p] == 0.0 ? 1.0 : 0.0;
        }
        samples[i] = std::move(s);
    });
    return samples;
}

}  // namespace irdseg
