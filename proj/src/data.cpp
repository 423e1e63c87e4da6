#include "osrlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include <zlib.h>

namespace osrlab {

// ---------------------------------------------------------------------------
// Synthetic blobs
// ---------------------------------------------------------------------------

LabeledSet gen_blobs(std::size_t total_classes, std::size_t d, std::size_t n_per_class,
                     double separation, double radius, std::uint64_t seed) {
    if (total_classes < 2) throw std::invalid_argument("gen_blobs: need at least 2 classes");
    if (d < 2) throw std::invalid_argument("gen_blobs: need d >= 2");
    if (!(radius > 0.0)) throw std::invalid_argument("gen_blobs: radius must be > 0");
    if (!(separation > 2.0 * radius))
        throw std::invalid_argument("gen_blobs: separation must exceed 2 * radius");
    if (radius >= 1.0) throw std::invalid_argument("gen_blobs: radius must be < 1");

    Rng rng(seed);
    // centers at least `radius` away from the boundary so samples stay inside
    const double lo = -1.0 + radius, hi = 1.0 - radius;
    std::vector<std::vector<double>> centers;
    constexpr std::size_t kMaxTries = 20000;
    for (std::size_t c = 0; c < total_classes; ++c) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
            std::vector<double> cand(d);
            for (double& v : cand) v = rng.uniform(lo, hi);
            bool ok = true;
            for (const auto& prev : centers) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) s += (cand[j] - prev[j]) * (cand[j] - prev[j]);
                if (std::sqrt(s) < separation) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                centers.push_back(std::move(cand));
                placed = true;
            }
        }
        if (!placed)
            throw std::runtime_error("gen_blobs: infeasible packing for the requested separation");
    }

    LabeledSet out;
    out.x = Tensor::zeros({total_classes * n_per_class, d});
    out.labels.resize(total_classes * n_per_class);
    std::size_t row = 0;
    std::vector<double> dir(d);
    for (std::size_t c = 0; c < total_classes; ++c) {
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            // uniform in the ball: unit direction scaled by radius * u^(1/d)
            double s = 0.0;
            do {
                s = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    dir[j] = rng.normal();
                    s += dir[j] * dir[j];
                }
            } while (s == 0.0);
            const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
            const double scale = r / std::sqrt(s);
            double* xr = out.x.data.data() + row * d;
            for (std::size_t j = 0; j < d; ++j) xr[j] = centers[c][j] + scale * dir[j];
            out.labels[row] = static_cast<int>(c);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Known/unknown split
// ---------------------------------------------------------------------------

OsrDataset split_known_unknown(const LabeledSet& raw, const std::vector<int>& known_ids,
                               double train_fraction, std::uint64_t seed) {
    if (known_ids.empty()) throw std::invalid_argument("split_known_unknown: known_ids is empty");
    if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
        throw std::invalid_argument("split_known_unknown: train_fraction must be in [0, 1]");

    std::set<int> present(raw.labels.begin(), raw.labels.end());
    std::set<int> known_set(known_ids.begin(), known_ids.end());
    if (known_set.size() != known_ids.size())
        throw std::invalid_argument("split_known_unknown: duplicate known ids");
    for (int id : known_ids)
        if (present.count(id) == 0)
            throw std::invalid_argument("split_known_unknown: known id not present in data");
    if (known_set.size() >= present.size())
        throw std::invalid_argument("split_known_unknown: known_ids must be a proper subset");

    const std::size_t d = raw.dim();
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < raw.size(); ++i) by_class[raw.labels[i]].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> train_idx, test_idx, unknown_idx;
    std::vector<int> train_y, test_y;
    for (std::size_t k = 0; k < known_ids.size(); ++k) {
        auto idx = by_class.at(known_ids[k]);
        // Fisher-Yates with the run RNG
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
        const std::size_t n_train =
            static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (i < n_train) {
                train_idx.push_back(idx[i]);
                train_y.push_back(static_cast<int>(k));
            } else {
                test_idx.push_back(idx[i]);
                test_y.push_back(static_cast<int>(k));
            }
        }
    }
    for (const auto& [cls, idx] : by_class) {
        if (known_set.count(cls)) continue;
        unknown_idx.insert(unknown_idx.end(), idx.begin(), idx.end());
    }

    auto gather = [&](const std::vector<std::size_t>& idx) {
        Tensor t = Tensor::zeros({idx.size(), d});
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::memcpy(t.data.data() + i * d, raw.x.data.data() + idx[i] * d, d * sizeof(double));
        return t;
    };

    OsrDataset out;
    out.known_train_x = gather(train_idx);
    out.known_train_y = std::move(train_y);
    out.known_test_x = gather(test_idx);
    out.known_test_y = std::move(test_y);
    out.unknown = UnknownPool(gather(unknown_idx));
    out.num_known = known_ids.size();
    out.image = raw.image;
    out.known_test_empty = test_idx.empty();
    out.split_seed = seed;
    out.known_original_ids = known_ids;
    return out;
}

// ---------------------------------------------------------------------------
// IDX IO
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803u;
constexpr std::uint32_t kLabelsMagic = 0x00000801u;

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IdxError(IdxErrorCode::Io, "idx: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
        throw IdxError(IdxErrorCode::Io, "idx: zlib init failed");
    std::vector<unsigned char> out;
    out.resize(std::max<std::size_t>(in.size() * 4, 1 << 16));
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    std::size_t written = 0;
    int ret = Z_OK;
    do {
        if (written == out.size()) out.resize(out.size() * 2);
        zs.next_out = out.data() + written;
        zs.avail_out = static_cast<uInt>(out.size() - written);
        ret = inflate(&zs, Z_NO_FLUSH);
        written = out.size() - zs.avail_out;
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&zs);
            throw IdxError(IdxErrorCode::Truncated, "idx: corrupt gzip stream");
        }
    } while (ret != Z_STREAM_END);
    inflateEnd(&zs);
    out.resize(written);
    return out;
}

std::vector<unsigned char> read_maybe_gzipped(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes);
    return bytes;
}

std::uint32_t be32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void put_be32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

LabeledSet load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = read_maybe_gzipped(images_path);
    const auto lab = read_maybe_gzipped(labels_path);

    if (img.size() < 16) throw IdxError(IdxErrorCode::Truncated, "idx: image header truncated");
    if (lab.size() < 8) throw IdxError(IdxErrorCode::Truncated, "idx: label header truncated");
    if (be32(img.data()) != kImagesMagic)
        throw IdxError(IdxErrorCode::BadMagic, "idx: bad image magic");
    if (be32(lab.data()) != kLabelsMagic)
        throw IdxError(IdxErrorCode::BadMagic, "idx: bad label magic");

    const std::size_t n_img = be32(img.data() + 4);
    const std::size_t rows = be32(img.data() + 8);
    const std::size_t cols = be32(img.data() + 12);
    const std::size_t n_lab = be32(lab.data() + 4);
    if (n_img != n_lab)
        throw IdxError(IdxErrorCode::CountMismatch, "idx: image/label count mismatch");
    const std::size_t d = rows * cols;
    if (img.size() != 16 + n_img * d) throw IdxError(IdxErrorCode::Truncated, "idx: image payload truncated");
    if (lab.size() != 8 + n_lab) throw IdxError(IdxErrorCode::Truncated, "idx: label payload truncated");

    LabeledSet out;
    out.x = Tensor::zeros({n_img, d});
    out.labels.resize(n_img);
    out.image = ImageShape{rows, cols};
    for (std::size_t i = 0; i < n_img; ++i) {
        const unsigned char* px = img.data() + 16 + i * d;
        double* xr = out.x.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j)
            xr[j] = 2.0 * static_cast<double>(px[j]) / 255.0 - 1.0;
        out.labels[i] = static_cast<int>(lab[8 + i]);
    }
    return out;
}

void save_idx(const LabeledSet& set, const std::string& images_path, const std::string& labels_path) {
    if (!set.image.valid()) throw std::invalid_argument("save_idx: set has no image shape");
    const std::size_t d = set.image.height * set.image.width;
    if (set.dim() != d) throw std::invalid_argument("save_idx: dim/image shape mismatch");

    std::ofstream imgs(images_path, std::ios::binary);
    std::ofstream labs(labels_path, std::ios::binary);
    if (!imgs || !labs) throw IdxError(IdxErrorCode::Io, "idx: cannot open output files");
    put_be32(imgs, kImagesMagic);
    put_be32(imgs, static_cast<std::uint32_t>(set.size()));
    put_be32(imgs, static_cast<std::uint32_t>(set.image.height));
    put_be32(imgs, static_cast<std::uint32_t>(set.image.width));
    put_be32(labs, kLabelsMagic);
    put_be32(labs, static_cast<std::uint32_t>(set.size()));
    std::vector<unsigned char> rowbuf(d);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const double* xr = set.x.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            const long v = std::lround((xr[j] + 1.0) * 255.0 / 2.0);
            rowbuf[j] = static_cast<unsigned char>(std::clamp(v, 0L, 255L));
        }
        imgs.write(reinterpret_cast<const char*>(rowbuf.data()), static_cast<std::streamsize>(d));
        labs.put(static_cast<char>(static_cast<unsigned char>(set.labels[i])));
    }
    if (!imgs || !labs) throw IdxError(IdxErrorCode::Io, "idx: write failed");
}

// ---------------------------------------------------------------------------
// Quarter-turn rotation
// ---------------------------------------------------------------------------

void rotate90_flat(const double* src, std::size_t h, std::size_t w, int k, double* out) {
    if (k < 0 || k > 3) throw std::invalid_argument("rotate90: k must be in 0..3");
    if ((k % 2 == 1) && h != w) throw std::invalid_argument("rotate90: odd k requires a square image");
    switch (k) {
        case 0:
            std::memcpy(out, src, h * w * sizeof(double));
            break;
        case 1:
            // (r, c) -> (w-1-c, r)
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c) out[(w - 1 - c) * h + r] = src[r * w + c];
            break;
        case 2:
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c) out[(h - 1 - r) * w + (w - 1 - c)] = src[r * w + c];
            break;
        case 3:
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c) out[c * h + (h - 1 - r)] = src[r * w + c];
            break;
    }
}

Tensor rotate90(const Tensor& image, int k) {
    if (image.rank() != 2) throw std::invalid_argument("rotate90: expected an H x W tensor");
    const std::size_t h = image.shape[0], w = image.shape[1];
    Tensor out = (k % 2 == 0) ? Tensor::zeros({h, w}) : Tensor::zeros({w, h});
    rotate90_flat(image.data.data(), h, w, k, out.data.data());
    return out;
}

}  // namespace osrlab
