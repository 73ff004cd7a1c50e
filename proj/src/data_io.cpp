#include "certsim/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "certsim/errors.hpp"
#include "certsim/lstn.hpp"
#include "certsim/rng.hpp"

namespace certsim {

namespace fs = std::filesystem;
using nlohmann::json;

// --- manifest -----------------------------------------------------------------

void DatasetManifest::validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries) {
        if (e.id.empty()) throw DataError("manifest entry with empty id");
        if (!seen.insert(e.id).second) {
            throw DataError("duplicate manifest id '" + e.id + "'");
        }
        if (e.y != 0 && e.y != 1) {
            throw DataError("manifest id '" + e.id + "' has label " + std::to_string(e.y) +
                            ", expected 0 or 1");
        }
    }
}

void DatasetManifest::save(const std::string& path) const {
    validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    for (const auto& e : entries) {
        json j = {{"id", e.id}, {"ref_path", e.ref_path}, {"x0_path", e.x0_path},
                  {"x1_path", e.x1_path}, {"y", e.y}};
        os << j.dump() << "\n";
    }
    if (!os) throw IoError("failed writing " + path);
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest " + path);
    DatasetManifest m;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            ManifestEntry e;
            e.id = j.at("id").get<std::string>();
            e.ref_path = j.at("ref_path").get<std::string>();
            e.x0_path = j.at("x0_path").get<std::string>();
            e.x1_path = j.at("x1_path").get<std::string>();
            e.y = j.at("y").get<int>();
            m.entries.push_back(std::move(e));
        } catch (const json::exception& ex) {
            throw FormatError("manifest " + path + " line " + std::to_string(lineno) +
                              ": " + ex.what());
        }
    }
    m.validate();
    return m;
}

std::vector<LoadedTriplet> load_dataset(const DatasetManifest& manifest, const std::string& base_dir) {
    std::vector<LoadedTriplet> out;
    out.reserve(manifest.entries.size());
    const fs::path base(base_dir);
    for (const auto& e : manifest.entries) {
        LoadedTriplet lt;
        lt.id = e.id;
        lt.t.x = load_tensor((base / e.ref_path).string());
        lt.t.x0 = load_tensor((base / e.x0_path).string());
        lt.t.x1 = load_tensor((base / e.x1_path).string());
        lt.t.y = e.y;
        validate_triplet(lt.t);
        out.push_back(std::move(lt));
    }
    return out;
}

// --- synthetic generator --------------------------------------------------------

namespace {

Tensor render_base_image(size_t s, Rng& rng) {
    Tensor img({3, s, s}, Dtype::f32);
    const size_t plane = s * s;
    const double sd = static_cast<double>(s);

    // Oriented sinusoid mixture shared across channels with per-channel gains.
    const int waves = 2 + static_cast<int>(rng.index(3));
    std::vector<double> fx(waves), fy(waves), phase(waves);
    std::vector<std::array<double, 3>> gain(waves);
    for (int w = 0; w < waves; ++w) {
        const double freq = rng.uniform(0.7, 3.5);
        const double angle = rng.uniform(0.0, 3.14159265358979323846);
        fx[w] = freq * std::cos(angle);
        fy[w] = freq * std::sin(angle);
        phase[w] = rng.uniform(0.0, 6.2831853);
        for (int c = 0; c < 3; ++c) gain[w][c] = rng.uniform(0.15, 0.6);
    }
    for (size_t r = 0; r < s; ++r) {
        for (size_t cidx = 0; cidx < s; ++cidx) {
            for (int w = 0; w < waves; ++w) {
                const double v = std::sin(6.2831853 * (fx[w] * r + fy[w] * cidx) / sd + phase[w]);
                for (int c = 0; c < 3; ++c) img[c * plane + r * s + cidx] += gain[w][c] * v;
            }
        }
    }

    // Colored Gaussian blobs.
    const int blobs = 1 + static_cast<int>(rng.index(3));
    for (int b = 0; b < blobs; ++b) {
        const double cx = rng.uniform(0.0, sd);
        const double cy = rng.uniform(0.0, sd);
        const double radius = rng.uniform(sd / 8.0, sd / 3.0);
        const double col[3] = {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)};
        for (size_t r = 0; r < s; ++r) {
            for (size_t cidx = 0; cidx < s; ++cidx) {
                const double dx = static_cast<double>(r) - cx;
                const double dy = static_cast<double>(cidx) - cy;
                const double wgt = std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
                for (int c = 0; c < 3; ++c) img[c * plane + r * s + cidx] += col[c] * wgt;
            }
        }
    }

    // Normalize into [0.06, 0.94] so distortions have headroom.
    double lo = img[0], hi = img[0];
    for (double v : img.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo > 1e-9 ? hi - lo : 1.0;
    for (double& v : img.data()) v = 0.06 + 0.88 * (v - lo) / span;
    img.quantize();
    return img;
}

enum class DistortKind { noise, blur, color };

Tensor apply_distortion(const Tensor& img, DistortKind kind, double severity, Rng& rng) {
    const size_t s = img.shape()[1];
    const size_t plane = s * s;
    Tensor out = img;
    switch (kind) {
    case DistortKind::noise: {
        const double sigma = 0.35 * severity;
        for (double& v : out.data()) v += sigma * rng.normal();
        break;
    }
    case DistortKind::blur: {
        // Separable truncated Gaussian with circular wrap; heavier severity
        // widens the kernel.
        const double bsigma = 0.3 + 2.4 * severity;
        const int radius = 3;
        std::vector<double> kernel1d(2 * radius + 1);
        double ksum = 0.0;
        for (int i = -radius; i <= radius; ++i) {
            kernel1d[i + radius] = std::exp(-0.5 * (i * i) / (bsigma * bsigma));
            ksum += kernel1d[i + radius];
        }
        for (double& v : kernel1d) v /= ksum;
        Tensor tmp = out;
        for (size_t c = 0; c < 3; ++c) {
            double* src = out.ptr() + c * plane;
            double* dst = tmp.ptr() + c * plane;
            for (size_t r = 0; r < s; ++r) {
                for (size_t j = 0; j < s; ++j) {
                    double acc = 0.0;
                    for (int t = -radius; t <= radius; ++t) {
                        acc += kernel1d[t + radius] * src[r * s + (j + s + t) % s];
                    }
                    dst[r * s + j] = acc;
                }
            }
            for (size_t j = 0; j < s; ++j) {
                for (size_t r = 0; r < s; ++r) {
                    double acc = 0.0;
                    for (int t = -radius; t <= radius; ++t) {
                        acc += kernel1d[t + radius] * dst[((r + s + t) % s) * s + j];
                    }
                    src[r * s + j] = acc;
                }
            }
        }
        break;
    }
    case DistortKind::color: {
        // Chroma rotation; angle grows with severity.
        const double theta = severity * 1.5707963267948966;
        const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        const double inv_sqrt6 = 1.0 / std::sqrt(6.0);
        const double ct = std::cos(theta), st = std::sin(theta);
        for (size_t i = 0; i < plane; ++i) {
            const double r = out[i], g = out[plane + i], b = out[2 * plane + i];
            const double o1 = (r - g) * inv_sqrt2;
            const double o2 = (r + g - 2.0 * b) * inv_sqrt6;
            const double d1 = (ct * o1 - st * o2) - o1;
            const double d2 = (st * o1 + ct * o2) - o2;
            out[i] = r + d1 * inv_sqrt2 + d2 * inv_sqrt6;
            out[plane + i] = g - d1 * inv_sqrt2 + d2 * inv_sqrt6;
            out[2 * plane + i] = b - 2.0 * d2 * inv_sqrt6;
        }
        break;
    }
    }
    for (double& v : out.data()) v = std::min(1.0, std::max(0.0, v));
    out.quantize();
    return out;
}

struct TripletImages {
    Tensor ref, x0, x1;
    int y = 0;
};

TripletImages make_triplet(size_t image_size, Rng& rng) {
    TripletImages t;
    t.ref = render_base_image(image_size, rng);
    const DistortKind kind = static_cast<DistortKind>(rng.index(3));
    double sev_lo = rng.uniform(0.15, 0.6);
    double sev_hi = std::min(0.98, sev_lo * rng.uniform(1.35, 2.3));
    if (sev_hi < sev_lo * 1.3) sev_lo = sev_hi / 1.35;
    const bool lo_on_x1 = rng.uniform() < 0.5;
    const double sev0 = lo_on_x1 ? sev_hi : sev_lo;
    const double sev1 = lo_on_x1 ? sev_lo : sev_hi;
    Rng rng0 = rng.fork(11);
    Rng rng1 = rng.fork(22);
    t.x0 = apply_distortion(t.ref, kind, sev0, rng0);
    t.x1 = apply_distortion(t.ref, kind, sev1, rng1);
    t.y = sev1 < sev0 ? 1 : 0;
    return t;
}

std::string triplet_id(size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "trip%06zu", i);
    return buf;
}

} // namespace

std::vector<LoadedTriplet> generate_synthetic_in_memory(size_t n, size_t image_size, uint64_t seed) {
    if (n < 1) throw ConfigError("synthetic dataset needs n >= 1");
    if (image_size < 8) throw ConfigError("synthetic dataset needs image size >= 8");
    std::vector<LoadedTriplet> out;
    out.reserve(n);
    const Rng base(seed);
    for (size_t i = 0; i < n; ++i) {
        Rng rng = base.fork(i + 1);
        const TripletImages imgs = make_triplet(image_size, rng);
        LoadedTriplet lt;
        lt.id = triplet_id(i);
        lt.t.x = imgs.ref;
        lt.t.x0 = imgs.x0;
        lt.t.x1 = imgs.x1;
        lt.t.y = imgs.y;
        out.push_back(std::move(lt));
    }
    return out;
}

DatasetManifest generate_synthetic(size_t n, size_t image_size, uint64_t seed,
                                   const std::string& out_dir) {
    const auto triplets = generate_synthetic_in_memory(n, image_size, seed);
    const fs::path base(out_dir);
    fs::create_directories(base / "images");
    DatasetManifest manifest;
    for (const auto& lt : triplets) {
        ManifestEntry e;
        e.id = lt.id;
        e.ref_path = "images/" + lt.id + "_ref.lstn";
        e.x0_path = "images/" + lt.id + "_x0.lstn";
        e.x1_path = "images/" + lt.id + "_x1.lstn";
        e.y = lt.t.y;
        save_tensor((base / e.ref_path).string(), lt.t.x);
        save_tensor((base / e.x0_path).string(), lt.t.x0);
        save_tensor((base / e.x1_path).string(), lt.t.x1);
        manifest.entries.push_back(std::move(e));
    }
    manifest.save((base / "triplets.jsonl").string());
    return manifest;
}

// --- embedding store -------------------------------------------------------------

EmbeddingStore::EmbeddingStore(size_t dim) : dim_(dim) {
    if (dim == 0) throw ConfigError("embedding store dimension must be positive");
}

void EmbeddingStore::add(const std::string& id, const Tensor& embedding) {
    if (dim_ == 0) throw ConfigError("embedding store dimension not set");
    if (embedding.size() != dim_) {
        throw DimensionError("embedding for '" + id + "' has " + std::to_string(embedding.size()) +
                             " values, store dimension is " + std::to_string(dim_));
    }
    if (index_.count(id)) throw DataError("duplicate embedding id '" + id + "'");
    index_[id] = ids_.size();
    ids_.push_back(id);
    flat_.insert(flat_.end(), embedding.data().begin(), embedding.data().end());
}

bool EmbeddingStore::contains(const std::string& id) const {
    return index_.count(id) != 0;
}

Tensor EmbeddingStore::embedding(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
        throw DataError("no teacher embedding for sample id '" + id + "'");
    }
    std::vector<double> v(flat_.begin() + static_cast<long>(it->second * dim_),
                          flat_.begin() + static_cast<long>((it->second + 1) * dim_));
    return Tensor::from_data({dim_}, std::move(v));
}

namespace {
constexpr char kStoreMagic[4] = {'E', 'M', 'B', 'S'};
constexpr uint8_t kStoreVersion = 1;
} // namespace

void EmbeddingStore::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kStoreMagic, 4);
    const char version = static_cast<char>(kStoreVersion);
    os.write(&version, 1);
    auto put_u64 = [&os](uint64_t v) {
        char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        os.write(buf, 8);
    };
    put_u64(ids_.size());
    put_u64(dim_);
    const char dtype = static_cast<char>(Dtype::f64);
    os.write(&dtype, 1);
    for (double v : flat_) {
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, 8);
        put_u64(bits);
    }
    json trailer = json::array();
    for (const auto& id : ids_) trailer.push_back(id);
    const std::string ts = trailer.dump();
    os.write(ts.data(), static_cast<std::streamsize>(ts.size()));
    os.flush();
    if (!os) throw IoError("failed writing " + path);
}

EmbeddingStore EmbeddingStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path + " for reading");
    char magic[4];
    if (!is.read(magic, 4)) throw IoError("truncated embedding store while reading magic");
    if (std::memcmp(magic, kStoreMagic, 4) != 0) {
        throw FormatError("bad embedding store magic at offset 0");
    }
    char version = 0;
    if (!is.read(&version, 1)) throw IoError("truncated embedding store");
    if (static_cast<uint8_t>(version) != kStoreVersion) {
        throw FormatError("unsupported embedding store version " + std::to_string(version));
    }
    auto get_u64 = [&is]() {
        unsigned char buf[8];
        if (!is.read(reinterpret_cast<char*>(buf), 8)) {
            throw IoError("truncated embedding store");
        }
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
        return v;
    };
    const uint64_t count = get_u64();
    const uint64_t dim = get_u64();
    char dtype = 0;
    if (!is.read(&dtype, 1)) throw IoError("truncated embedding store");
    if (dtype != static_cast<char>(Dtype::f64)) {
        throw FormatError("unsupported embedding store dtype code " + std::to_string(dtype));
    }
    EmbeddingStore store(dim);
    std::vector<double> flat(count * dim);
    for (auto& v : flat) {
        const uint64_t bits = get_u64();
        std::memcpy(&v, &bits, 8);
    }
    std::string ts((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    json trailer;
    try {
        trailer = json::parse(ts);
    } catch (const json::exception& e) {
        throw FormatError(std::string("unparseable embedding store id table: ") + e.what());
    }
    if (!trailer.is_array() || trailer.size() != count) {
        throw FormatError("embedding store id table does not match record count");
    }
    for (size_t i = 0; i < count; ++i) {
        std::vector<double> v(flat.begin() + static_cast<long>(i * dim),
                              flat.begin() + static_cast<long>((i + 1) * dim));
        store.add(trailer[i].get<std::string>(), Tensor::from_data({dim}, std::move(v)));
    }
    return store;
}

// --- synthetic teacher -------------------------------------------------------------

Tensor synthetic_teacher_embed(const Tensor& image, size_t dim, uint64_t seed) {
    // Frozen random projection + tanh; the projection depends only on
    // (seed, input size, dim).
    Rng rng = Rng(seed).fork("teacher-projection");
    const size_t n = image.size();
    Tensor out({dim});
    const double gain = 2.5 / std::sqrt(static_cast<double>(n));
    for (size_t i = 0; i < dim; ++i) {
        double acc = 0.1 * rng.normal();
        for (size_t j = 0; j < n; ++j) acc += gain * rng.normal() * image[j];
        out[i] = std::tanh(acc);
    }
    return out;
}

EmbeddingStore build_synthetic_teacher_store(const std::vector<LoadedTriplet>& dataset,
                                             size_t dim, uint64_t seed) {
    EmbeddingStore store(dim);
    for (const auto& lt : dataset) {
        store.add(lt.id, synthetic_teacher_embed(lt.t.x, dim, seed));
    }
    return store;
}

void check_teacher_coverage(const EmbeddingStore& store, const std::vector<LoadedTriplet>& dataset) {
    for (const auto& lt : dataset) {
        if (!store.contains(lt.id)) {
            throw DataError("no teacher embedding for sample id '" + lt.id + "'");
        }
    }
}

// --- retrieval ---------------------------------------------------------------------

RetrievalIndex build_retrieval_index(const FeatureExtractor& f,
                                     const std::vector<std::pair<std::string, Tensor>>& images) {
    RetrievalIndex index;
    for (const auto& [id, img] : images) {
        Tensor e = f.extract(img).embedding;
        const double n = l2_norm(e);
        if (n < kEmbedNormFloor) {
            throw NumericError("degenerate embedding for corpus image '" + id + "'");
        }
        for (double& v : e.data()) v /= n;
        index.ids.push_back(id);
        index.embeddings.push_back(std::move(e));
    }
    return index;
}

std::vector<RetrievalHit> retrieve(const RetrievalIndex& index, const FeatureExtractor& f,
                                   const Tensor& query, size_t topk) {
    if (index.ids.empty()) throw ConfigError("retrieval index is empty");
    if (topk < 1 || topk > index.ids.size()) {
        throw ConfigError("topk must lie in [1, " + std::to_string(index.ids.size()) + "]");
    }
    Tensor q = f.extract(query).embedding;
    const double n = l2_norm(q);
    if (n < kEmbedNormFloor) throw NumericError("degenerate query embedding");
    for (double& v : q.data()) v /= n;

    std::vector<RetrievalHit> hits(index.ids.size());
    for (size_t i = 0; i < index.ids.size(); ++i) {
        hits[i].id = index.ids[i];
        hits[i].distance = std::clamp(1.0 - dot(q, index.embeddings[i]), 0.0, 2.0);
    }
    std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.id < b.id;
    });
    hits.resize(topk);
    return hits;
}

} // namespace certsim
