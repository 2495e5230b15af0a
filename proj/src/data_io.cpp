#include "msfcn/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "msfcn/tns_io.hpp"

namespace msfcn {
namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    DatasetManifest m;
    m.dir = path.parent_path();
    std::string line;
    bool saw_header = false;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t[0] == '#') {
            const size_t eq = t.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = trim(t.substr(1, eq - 1));
            const std::string val = trim(t.substr(eq + 1));
            try {
                if (key == "channels") m.channels = std::stoi(val);
                else if (key == "time_steps") m.time_steps = std::stoi(val);
                else if (key == "num_classes") m.num_classes = std::stoi(val);
                else if (key == "patch") m.patch = std::stoi(val);
            } catch (const std::exception&) {
                throw DataError(path.filename().string() + ":" + std::to_string(lineno) +
                                ": bad metadata value for " + key);
            }
            continue;
        }
        if (!saw_header) {
            if (t != "image,label,split")
                throw DataError(path.filename().string() + ":" + std::to_string(lineno) +
                                ": expected header 'image,label,split'");
            saw_header = true;
            continue;
        }
        auto cols = split_csv_line(t);
        if (cols.size() != 3)
            throw DataError(path.filename().string() + ":" + std::to_string(lineno) +
                            ": expected 3 columns");
        if (cols[2] != "train" && cols[2] != "val" && cols[2] != "test")
            throw DataError(path.filename().string() + ":" + std::to_string(lineno) +
                            ": split must be train/val/test, got '" + cols[2] + "'");
        m.entries.push_back({cols[0], cols[1], cols[2]});
    }
    if (!saw_header) throw DataError(path.string() + ": no header line");
    if (m.entries.empty()) throw DataError(path.string() + ": no entries");
    return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << "# channels = " << m.channels << "\n";
    out << "# time_steps = " << m.time_steps << "\n";
    out << "# num_classes = " << m.num_classes << "\n";
    if (m.patch) out << "# patch = " << m.patch << "\n";
    out << "image,label,split\n";
    for (const auto& e : m.entries) out << e.image << "," << e.label << "," << e.split << "\n";
}

PatchSet tile_patches(const Tensor& image, const LabelMap& label, uint32_t patch) {
    if (image.rank() != 4) throw ShapeError("tile_patches: image must be (c,t,h,w)");
    if (patch == 0) throw ShapeError("tile_patches: patch size must be > 0");
    const uint32_t h = image.shape[2], w = image.shape[3];
    if (label.h != h || label.w != w)
        throw ShapeError("tile_patches: label extents " + std::to_string(label.h) + "x" +
                         std::to_string(label.w) + " do not match image");

    PatchSet ps;
    ps.grid.patch = patch;
    ps.grid.orig_h = h;
    ps.grid.orig_w = w;
    ps.grid.rows = (h + patch - 1) / patch;
    ps.grid.cols = (w + patch - 1) / patch;
    ps.grid.padded_h = ps.grid.rows * patch;
    ps.grid.padded_w = ps.grid.cols * patch;

    const Tensor padded = pad_spatial(image, ps.grid.padded_h, ps.grid.padded_w);
    const LabelMap plab = pad_label(label, ps.grid.padded_h, ps.grid.padded_w);
    const uint32_t c = image.shape[0], t = image.shape[1];

    for (uint32_t gr = 0; gr < ps.grid.rows; ++gr) {
        for (uint32_t gc = 0; gc < ps.grid.cols; ++gc) {
            Tensor tile({c, t, patch, patch}, 0.f);
            for (uint32_t ci = 0; ci < c; ++ci)
                for (uint32_t ti = 0; ti < t; ++ti)
                    for (uint32_t i = 0; i < patch; ++i) {
                        const size_t src = ((size_t(ci) * t + ti) * ps.grid.padded_h +
                                            (size_t(gr) * patch + i)) *
                                               ps.grid.padded_w +
                                           size_t(gc) * patch;
                        std::copy(padded.data.begin() + src, padded.data.begin() + src + patch,
                                  tile.data.begin() +
                                      ((size_t(ci) * t + ti) * patch + i) * patch);
                    }
            LabelMap ltile(patch, patch, kIgnoreLabel);
            for (uint32_t i = 0; i < patch; ++i) {
                const size_t src =
                    (size_t(gr) * patch + i) * ps.grid.padded_w + size_t(gc) * patch;
                std::copy(plab.data.begin() + src, plab.data.begin() + src + patch,
                          ltile.data.begin() + size_t(i) * patch);
            }
            ps.images.push_back(std::move(tile));
            ps.labels.push_back(std::move(ltile));
        }
    }
    return ps;
}

LabelMap untile_labels(const std::vector<LabelMap>& patches, const PatchGrid& grid) {
    if (patches.size() != size_t(grid.rows) * grid.cols)
        throw ShapeError("untile_labels: got " + std::to_string(patches.size()) +
                         " patches, grid wants " + std::to_string(size_t(grid.rows) * grid.cols));
    LabelMap full(grid.padded_h, grid.padded_w, kIgnoreLabel);
    for (uint32_t gr = 0; gr < grid.rows; ++gr)
        for (uint32_t gc = 0; gc < grid.cols; ++gc) {
            const LabelMap& p = patches[size_t(gr) * grid.cols + gc];
            if (p.h != grid.patch || p.w != grid.patch)
                throw ShapeError("untile_labels: patch extents mismatch grid");
            for (uint32_t i = 0; i < grid.patch; ++i)
                std::copy(p.data.begin() + size_t(i) * grid.patch,
                          p.data.begin() + size_t(i) * grid.patch + grid.patch,
                          full.data.begin() +
                              (size_t(gr) * grid.patch + i) * grid.padded_w +
                              size_t(gc) * grid.patch);
        }
    LabelMap out(grid.orig_h, grid.orig_w, kIgnoreLabel);
    for (uint32_t i = 0; i < grid.orig_h; ++i)
        std::copy(full.data.begin() + size_t(i) * grid.padded_w,
                  full.data.begin() + size_t(i) * grid.padded_w + grid.orig_w,
                  out.data.begin() + size_t(i) * grid.orig_w);
    return out;
}

void split_dataset(std::vector<ManifestEntry>& entries, double f_train, double f_val,
                   double f_test, uint64_t seed) {
    if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    if (f_train < 0 || f_val < 0 || f_test < 0)
        throw ConfigError("split fractions must be >= 0");
    if (entries.size() < 3) throw DataError("split: need at least 3 entries");

    std::vector<size_t> order(entries.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const size_t n = entries.size();
    const size_t n_train = size_t(std::llround(f_train * double(n)));
    const size_t n_val = size_t(std::llround(f_val * double(n)));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
        throw DataError("split: a subset came out empty for n=" + std::to_string(n));
    for (size_t i = 0; i < n; ++i)
        entries[order[i]].split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
}

uint64_t mix64(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 0x632be59bd9b4e019ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

namespace {

void flip_w(Tensor& img, LabelMap& lab) {
    const uint32_t w = img.shape[3];
    const size_t rows = img.size() / w;
    for (size_t r = 0; r < rows; ++r)
        std::reverse(img.data.begin() + r * w, img.data.begin() + (r + 1) * w);
    for (uint32_t i = 0; i < lab.h; ++i)
        std::reverse(lab.data.begin() + size_t(i) * lab.w,
                     lab.data.begin() + size_t(i + 1) * lab.w);
}

void flip_h(Tensor& img, LabelMap& lab) {
    const uint32_t h = img.shape[2], w = img.shape[3];
    const size_t planes = img.size() / (size_t(h) * w);
    for (size_t pl = 0; pl < planes; ++pl)
        for (uint32_t i = 0; i < h / 2; ++i)
            std::swap_ranges(img.data.begin() + (pl * h + i) * w,
                             img.data.begin() + (pl * h + i + 1) * w,
                             img.data.begin() + (pl * h + (h - 1 - i)) * w);
    for (uint32_t i = 0; i < lab.h / 2; ++i)
        std::swap_ranges(lab.data.begin() + size_t(i) * lab.w,
                         lab.data.begin() + size_t(i + 1) * lab.w,
                         lab.data.begin() + size_t(lab.h - 1 - i) * lab.w);
}

// 3-tap separable gaussian with clamp-to-edge, applied per (c,t) plane.
void blur_plane(float* p, uint32_t h, uint32_t w, double sigma, std::vector<float>& tmp) {
    const double k1 = std::exp(-0.5 / (sigma * sigma));
    const double norm = 1.0 + 2.0 * k1;
    const float c0 = float(1.0 / norm), c1 = float(k1 / norm);
    tmp.resize(size_t(h) * w);
    for (uint32_t i = 0; i < h; ++i)
        for (uint32_t j = 0; j < w; ++j) {
            const float a = p[size_t(i) * w + (j == 0 ? 0 : j - 1)];
            const float b = p[size_t(i) * w + j];
            const float c = p[size_t(i) * w + (j + 1 >= w ? w - 1 : j + 1)];
            tmp[size_t(i) * w + j] = c1 * a + c0 * b + c1 * c;
        }
    for (uint32_t i = 0; i < h; ++i)
        for (uint32_t j = 0; j < w; ++j) {
            const float a = tmp[size_t(i == 0 ? 0 : i - 1) * w + j];
            const float b = tmp[size_t(i) * w + j];
            const float c = tmp[size_t(i + 1 >= h ? h - 1 : i + 1) * w + j];
            p[size_t(i) * w + j] = c1 * a + c0 * b + c1 * c;
        }
}

}  // namespace

void augment_sample(Tensor& image, LabelMap& label, const AugmentOptions& opt, Rng& rng) {
    if (image.rank() != 4) throw ShapeError("augment_sample: image must be (c,t,h,w)");
    const uint32_t c = image.shape[0], t = image.shape[1];
    const uint32_t h = image.shape[2], w = image.shape[3];
    if (label.h != h || label.w != w) throw ShapeError("augment_sample: label extents mismatch");

    // Every transform consumes the same number of draws whether or not it
    // fires, so one change never reshuffles the rest of the stream.
    if (opt.hflip) {
        const bool fire = rng.uniform01() < 0.5;
        if (fire) flip_w(image, label);
    }
    if (opt.vflip) {
        const bool fire = rng.uniform01() < 0.5;
        if (fire) flip_h(image, label);
    }
    if (opt.color) {
        const bool fire = rng.uniform01() < 0.5;
        for (uint32_t ci = 0; ci < c; ++ci) {
            const float gain = float(rng.uniform(0.9, 1.1));
            if (!fire) continue;
            float* p = image.data.data() + size_t(ci) * t * h * w;
            for (size_t i = 0; i < size_t(t) * h * w; ++i) p[i] *= gain;
        }
    }
    if (opt.blur) {
        const bool fire = rng.uniform01() < 0.5;
        const double sigma = rng.uniform(0.5, 1.5);
        if (fire) {
            std::vector<float> tmp;
            for (uint32_t ci = 0; ci < c; ++ci)
                for (uint32_t ti = 0; ti < t; ++ti)
                    blur_plane(image.data.data() + (size_t(ci) * t + ti) * h * w, h, w, sigma,
                               tmp);
        }
    }
    if (opt.noise) {
        const bool fire = rng.uniform01() < 0.5;
        const double frac = rng.uniform(0.01, 0.05);
        if (fire) {
            float lo = image.data[0], hi = image.data[0];
            for (float v : image.data) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            const double sigma = frac * double(hi - lo);
            if (sigma > 0)
                for (float& v : image.data) v += float(sigma * rng.normal());
        }
    }
}

// --- synthetic datasets -----------------------------------------------------

namespace {

// Distinct flat color per class from the low bits of the class id.
void class_color(int k, float rgb[3]) {
    for (int c = 0; c < 3; ++c) rgb[c] = ((k >> c) & 1) ? 0.85f : 0.15f;
}

}  // namespace

void synth_shapes(const std::filesystem::path& dir, int n, int size, int num_classes,
                  uint64_t seed) {
    if (num_classes < 2 || num_classes > 8)
        throw ConfigError("synth shapes: num_classes must be 2..8 (distinct colors)");
    if (n < 3) throw ConfigError("synth shapes: need n >= 3");
    if (size < 16) throw ConfigError("synth shapes: size must be >= 16");
    std::filesystem::create_directories(dir);
    Rng rng(seed);

    DatasetManifest m;
    m.dir = dir;
    m.channels = 3;
    m.time_steps = 1;
    m.num_classes = num_classes;
    m.patch = size;

    int shape_serial = 0;
    for (int img = 0; img < n; ++img) {
        Tensor x({3, 1, uint32_t(size), uint32_t(size)}, 0.f);
        LabelMap lab{uint32_t(size), uint32_t(size), 0};
        float bg[3];
        class_color(0, bg);
        for (int c = 0; c < 3; ++c)
            std::fill(x.data.begin() + size_t(c) * size * size,
                      x.data.begin() + size_t(c + 1) * size * size, bg[c]);

        const int n_shapes = 3 + int(rng.below(4));
        for (int s = 0; s < n_shapes; ++s) {
            // Round-robin class so every class shows up across the dataset.
            const int cls = 1 + (shape_serial++ % (num_classes - 1));
            float col[3];
            class_color(cls, col);
            const int ext = size / 8 + int(rng.below(uint64_t(size / 4)));
            const int cy = int(rng.below(uint64_t(size)));
            const int cx = int(rng.below(uint64_t(size)));
            const bool disc = rng.uniform01() < 0.5;
            for (int i = std::max(0, cy - ext); i < std::min(size, cy + ext); ++i)
                for (int j = std::max(0, cx - ext); j < std::min(size, cx + ext); ++j) {
                    if (disc) {
                        const long long dy = i - cy, dx = j - cx;
                        if (dy * dy + dx * dx > (long long)ext * ext) continue;
                    }
                    lab.at(uint32_t(i), uint32_t(j)) = uint16_t(cls);
                    for (int c = 0; c < 3; ++c)
                        x.data[(size_t(c) * size + i) * size + j] = col[c];
                }
        }
        for (float& v : x.data) v += float(0.02 * rng.normal());

        char img_name[32], lab_name[32];
        std::snprintf(img_name, sizeof img_name, "img_%03d.tns", img);
        std::snprintf(lab_name, sizeof lab_name, "lab_%03d.tns", img);
        save_tensor(x, dir / img_name);
        save_labelmap(lab, dir / lab_name);
        m.entries.push_back({img_name, lab_name, "train"});
    }
    split_dataset(m.entries, 0.6, 0.2, 0.2, seed);
    save_manifest(m, dir / "manifest.csv");
}

void synth_temporal(const std::filesystem::path& dir, int n, int size, int time_steps,
                    uint64_t seed) {
    if (time_steps < 2) throw ConfigError("synth temporal: time_steps must be >= 2");
    if (n < 3) throw ConfigError("synth temporal: need n >= 3");
    if (size < 8) throw ConfigError("synth temporal: size must be >= 8");
    std::filesystem::create_directories(dir);
    Rng rng(seed);

    DatasetManifest m;
    m.dir = dir;
    m.channels = 1;
    m.time_steps = time_steps;
    m.num_classes = 2;
    m.patch = size;

    const uint32_t t = uint32_t(time_steps), sz = uint32_t(size);
    for (int img = 0; img < n; ++img) {
        // Class 0 = rising ramp over t, class 1 = the same values reversed.
        // Sides swap per image so position carries no information.
        const bool left_is_rising = rng.uniform01() < 0.5;
        Tensor x({1, t, sz, sz}, 0.f);
        LabelMap lab(sz, sz, 0);
        for (uint32_t i = 0; i < sz; ++i)
            for (uint32_t j = 0; j < sz; ++j) {
                const bool left = j < sz / 2;
                const bool rising = left == left_is_rising;
                lab.at(i, j) = rising ? 0 : 1;
                for (uint32_t ti = 0; ti < t; ++ti) {
                    const uint32_t step = rising ? ti : (t - 1 - ti);
                    const double base = 0.2 + 0.6 * double(step) / double(t - 1);
                    x.data[(size_t(ti) * sz + i) * sz + j] =
                        float(base + 0.05 * rng.normal());
                }
            }

        char img_name[32], lab_name[32];
        std::snprintf(img_name, sizeof img_name, "img_%03d.tns", img);
        std::snprintf(lab_name, sizeof lab_name, "lab_%03d.tns", img);
        save_tensor(x, dir / img_name);
        save_labelmap(lab, dir / lab_name);
        m.entries.push_back({img_name, lab_name, "train"});
    }
    split_dataset(m.entries, 0.6, 0.2, 0.2, seed);
    save_manifest(m, dir / "manifest.csv");
}

}  // namespace msfcn
