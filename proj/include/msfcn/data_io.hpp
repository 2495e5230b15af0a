#pragma once

#include <filesystem>

#include "msfcn/common.hpp"
#include "msfcn/tensor.hpp"

namespace msfcn {

// Dataset = a csv manifest plus TNS files next to it. Manifest format:
//   # channels = 3        <- metadata as commented key = value lines
//   image,label,split     <- header
//   img_000.tns,lab_000.tns,train
// Paths are relative to the manifest's directory.
struct ManifestEntry {
    std::string image, label, split;
};

struct DatasetManifest {
    std::filesystem::path dir;
    int channels = 0, time_steps = 1, num_classes = 0, patch = 0;
    std::vector<ManifestEntry> entries;

    std::vector<size_t> split_indices(const std::string& name) const {
        std::vector<size_t> out;
        for (size_t i = 0; i < entries.size(); ++i)
            if (entries[i].split == name) out.push_back(i);
        return out;
    }
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// --- tiling --------------------------------------------------------------------

struct PatchGrid {
    uint32_t rows = 0, cols = 0, patch = 0;
    uint32_t padded_h = 0, padded_w = 0;
    uint32_t orig_h = 0, orig_w = 0;
};

struct PatchSet {
    PatchGrid grid;
    std::vector<Tensor> images;   // row-major over the grid
    std::vector<LabelMap> labels;
};

// Pads image (zeros) and label (ignore) up to the next patch multiple, then
// cuts non-overlapping patch x patch tiles in row-major order.
PatchSet tile_patches(const Tensor& image, const LabelMap& label, uint32_t patch);

// Reassembles per-patch label maps and crops back to the original extents.
LabelMap untile_labels(const std::vector<LabelMap>& patches, const PatchGrid& grid);

// --- splits ----------------------------------------------------------------------

// Shuffles (seeded) and assigns train/val/test by fractions that must sum to 1.
void split_dataset(std::vector<ManifestEntry>& entries, double f_train, double f_val,
                   double f_test, uint64_t seed);

// --- augmentation ------------------------------------------------------------------

struct AugmentOptions {
    bool hflip = true;
    bool vflip = true;
    bool color = true;   // per-channel gain in [0.9, 1.1]
    bool blur = true;    // 3-tap separable gaussian, sigma in [0.5, 1.5]
    bool noise = true;   // additive gaussian, sigma in [0.01, 0.05] of value range
};

// Applies the enabled transforms in a fixed order, each with probability 1/2.
// Geometric transforms move the label map along; photometric ones leave it
// alone, so label values never change except by flipping position.
void augment_sample(Tensor& image, LabelMap& label, const AugmentOptions& opt, Rng& rng);

// Derives the per-sample augmentation stream from (seed, epoch, index) so the
// draw sequence does not depend on batch order.
uint64_t mix64(uint64_t a, uint64_t b);

// --- synthetic datasets ----------------------------------------------------------------

// Flat-color rectangles and discs (classes 1..K-1) over a class-0 background,
// 3 channels, t=1, light pixel noise. Each class's color is distinct, so the
// task is learnable from single pixels; n images written to dir + manifest.csv.
void synth_shapes(const std::filesystem::path& dir, int n, int size, int num_classes,
                  uint64_t seed);

// Two classes that differ ONLY in temporal ordering: one half-plane carries a
// rising ramp over t, the other the same values reversed. Which half gets
// which pattern is a per-image coin flip, so nothing spatial separates the
// classes; per-pixel mean and variance over t match exactly by construction.
void synth_temporal(const std::filesystem::path& dir, int n, int size, int time_steps,
                    uint64_t seed);

}  // namespace msfcn
