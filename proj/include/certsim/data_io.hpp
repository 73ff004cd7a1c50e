#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "certsim/layers.hpp"
#include "certsim/metric.hpp"
#include "certsim/tensor.hpp"

namespace certsim {

struct ManifestEntry {
    std::string id;
    std::string ref_path;
    std::string x0_path;
    std::string x1_path;
    int y = 0;
};

// JSON-lines triplet manifest; ids must be unique, labels in {0,1}.
struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    void validate() const;
    void save(const std::string& path) const;
    static DatasetManifest load(const std::string& path);
};

struct LoadedTriplet {
    std::string id;
    Triplet t;
};

// Resolves paths relative to base_dir and loads all LSTN images.
std::vector<LoadedTriplet> load_dataset(const DatasetManifest& manifest, const std::string& base_dir);

// Procedural 2AFC triplets: base images are mixtures of oriented sinusoids
// and colored blobs; each triplet applies one distortion family (noise,
// blur, color shift) at two severities differing by at least 30%, and the
// label names the milder distortion. Writes LSTN images plus the manifest
// into out_dir and returns the manifest.
DatasetManifest generate_synthetic(size_t n, size_t image_size, uint64_t seed,
                                   const std::string& out_dir);

// In-memory variant used by tests and the training harness.
std::vector<LoadedTriplet> generate_synthetic_in_memory(size_t n, size_t image_size, uint64_t seed);

// id -> embedding map with a single recorded dimension.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    EmbeddingStore(size_t dim);

    size_t dim() const { return dim_; }
    size_t size() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }

    void add(const std::string& id, const Tensor& embedding);
    bool contains(const std::string& id) const;
    // Throws DataError naming the id when absent.
    Tensor embedding(const std::string& id) const;

    // Binary layout: "EMBS" magic, version byte, u64 count, u64 dim, dtype
    // byte, fixed-stride little-endian records, then a JSON id table
    // trailing to end of file.
    void save(const std::string& path) const;
    static EmbeddingStore load(const std::string& path);

private:
    size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<double> flat_;
    std::unordered_map<std::string, size_t> index_;
};

// Frozen random projection + tanh, the stand-in teacher embedder.
Tensor synthetic_teacher_embed(const Tensor& image, size_t dim, uint64_t seed);

// Builds a store covering every dataset id, either synthetically or by
// validating a store loaded from file against the dataset.
EmbeddingStore build_synthetic_teacher_store(const std::vector<LoadedTriplet>& dataset,
                                             size_t dim, uint64_t seed);
void check_teacher_coverage(const EmbeddingStore& store, const std::vector<LoadedTriplet>& dataset);

struct RetrievalIndex {
    std::vector<std::string> ids;
    std::vector<Tensor> embeddings; // unit-normalized
};

RetrievalIndex build_retrieval_index(const FeatureExtractor& f,
                                     const std::vector<std::pair<std::string, Tensor>>& images);

struct RetrievalHit {
    std::string id;
    double distance = 0.0;
};

// Exact ranking by cosine distance, ties broken by id.
std::vector<RetrievalHit> retrieve(const RetrievalIndex& index, const FeatureExtractor& f,
                                   const Tensor& query, size_t topk);

} // namespace certsim
