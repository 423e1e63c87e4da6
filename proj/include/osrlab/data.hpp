#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "osrlab/rng.hpp"
#include "osrlab/tensor.hpp"

namespace osrlab {

struct ImageShape {
    std::size_t height = 0;
    std::size_t width = 0;
    bool valid() const { return height > 0 && width > 0; }
};

// Labeled samples over the original class ids, before the known/unknown split.
struct LabeledSet {
    Tensor x;  // [N, d], every coordinate in [-1, 1]
    std::vector<int> labels;
    ImageShape image;  // zero for plain vector data
    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return x.cols(); }
};

// Unlabeled open-set pool. It can be poisoned so that any read throws, which
// is how tests prove the training path never touches it.
class UnknownPool {
public:
    UnknownPool() : x_(Tensor::zeros({0, 0})) {}
    explicit UnknownPool(Tensor x) : x_(std::move(x)) {}

    std::size_t size() const { return x_.shape.empty() ? 0 : x_.shape[0]; }
    const Tensor& samples() const {
        if (poisoned_) throw std::logic_error("UnknownPool: read from poisoned pool");
        return x_;
    }
    void poison(bool on) { poisoned_ = on; }

private:
    Tensor x_;
    bool poisoned_ = false;
};

struct OsrDataset {
    Tensor known_train_x;  // [N_tr, d]
    std::vector<int> known_train_y;
    Tensor known_test_x;  // [N_te, d]
    std::vector<int> known_test_y;
    UnknownPool unknown;
    std::size_t num_known = 0;  // K
    ImageShape image;
    bool known_test_empty = false;  // flagged when train_fraction == 1

    // provenance
    std::string source;
    std::uint64_t split_seed = 0;
    std::vector<int> known_original_ids;

    std::size_t dim() const { return known_train_x.cols(); }
};

// Seeded ball-cluster generator inside [-1, 1]^d: class c is a uniform ball
// of the given radius around a center; centers are rejection-sampled so that
// every pairwise center distance is >= separation. Requires
// separation > 2 * radius, which keeps class supports disjoint with a gap.
LabeledSet gen_blobs(std::size_t total_classes, std::size_t d, std::size_t n_per_class,
                     double separation, double radius, std::uint64_t seed);

// Known/unknown class-split protocol: known classes are split train/test by
// train_fraction (seeded, per class); every other class is pooled, unlabeled,
// as the single unknown class. Known labels are remapped to 0..K-1 in the
// order given by known_ids.
OsrDataset split_known_unknown(const LabeledSet& raw, const std::vector<int>& known_ids,
                               double train_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// IDX file format (big-endian), with optional gzip wrapper (0x1f 0x8b sniff).
// ---------------------------------------------------------------------------

enum class IdxErrorCode { BadMagic, Truncated, CountMismatch, Io };

class IdxError : public std::runtime_error {
public:
    IdxError(IdxErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    IdxErrorCode code() const { return code_; }

private:
    IdxErrorCode code_;
};

// Parses an image/label IDX pair; pixels are rescaled from [0, 255] to
// [-1, 1]. The flattened dimension is rows*cols with the shape retained for
// rotation and augmentation.
LabeledSet load_idx(const std::string& images_path, const std::string& labels_path);

// Re-serializes a parsed set back to plain IDX bytes (inverse of load_idx).
void save_idx(const LabeledSet& set, const std::string& images_path, const std::string& labels_path);

// k quarter-turns counterclockwise of an H x W image; k=1 maps pixel (r, c)
// to (W-1-c, r). Odd k requires a square image.
Tensor rotate90(const Tensor& image, int k);

// Same rotation on a flattened row (length h*w), writing into out.
void rotate90_flat(const double* src, std::size_t h, std::size_t w, int k, double* out);

}  // namespace osrlab
