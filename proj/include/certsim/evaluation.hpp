#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "certsim/attacks.hpp"
#include "certsim/data_io.hpp"
#include "certsim/metric.hpp"

namespace certsim {

// Radius given either as an exact fraction "36/255" or a decimal literal.
// Fractions are parsed rationally so reports can carry both forms without
// decimal drift.
struct RadiusSpec {
    std::string label;
    double value = 0.0;
};

RadiusSpec parse_radius(const std::string& text);
// Parses a comma-separated list, sorts ascending by value, drops duplicates.
std::vector<RadiusSpec> parse_radius_grid(const std::string& text);

double natural_score(const FeatureExtractor& f, const std::vector<LoadedTriplet>& data,
                     int threads = 1);

std::vector<Certificate> certify_dataset(const FeatureExtractor& f,
                                         const std::vector<LoadedTriplet>& data, int threads = 1);

// Fraction of triplets that are correct AND carry a valid certificate with
// radius >= rho.
double certified_score(const std::vector<Certificate>& certs, double rho);
double certified_score(const FeatureExtractor& f, const std::vector<LoadedTriplet>& data,
                       double rho, int threads = 1);

// Fraction of triplets still correctly classified after attack_triplet.
// When `carry` is non-null it holds, per triplet, the strongest perturbation
// found so far; it is read as an extra warm start and updated in place,
// which makes score sweeps over growing budgets monotone.
double empirical_score(const FeatureExtractor& f, const std::vector<LoadedTriplet>& data,
                       const AttackConfig& cfg, int threads = 1,
                       std::vector<Tensor>* carry = nullptr);

struct Histogram {
    std::vector<double> edges;  // bins + 1 edges over [0, 2]
    std::vector<size_t> counts;
};

Histogram distance_histogram(const FeatureExtractor& f, const std::vector<Tensor>& images,
                             const AttackConfig& cfg, size_t bins, int threads = 1);

struct EvalOptions {
    std::vector<RadiusSpec> radii; // defaults to {36/255, 72/255, 108/255}
    size_t attack_steps = 50;
    uint64_t attack_seed = 0;
    size_t histogram_bins = 20;
    double histogram_epsilon = 1.0;
    size_t histogram_images = 50; // cap on attacked images for the histogram
    int threads = 1;
};

std::vector<RadiusSpec> default_radius_grid();

// Full report document. Asserts the soundness sandwich
// certified(rho) <= empirical(eps = rho) <= natural on the grid.
nlohmann::ordered_json eval_report(const FeatureExtractor& f, const std::vector<LoadedTriplet>& data,
                           const EvalOptions& options);

// Runs fn(i) for i in [0, n) over the requested number of threads; results
// must be written into position-indexed storage by the caller.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn);

nlohmann::json certificate_json(const std::string& id, const Certificate& cert);

} // namespace certsim
