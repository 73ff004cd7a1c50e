#include "certsim/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <cmath>
#include <thread>

#include "certsim/errors.hpp"
#include "certsim/rng.hpp"

namespace certsim {

using nlohmann::json;

void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min<int>(threads, static_cast<int>(n));
    pool.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

RadiusSpec parse_radius(const std::string& text) {
    RadiusSpec spec;
    spec.label = text;
    const size_t slash = text.find('/');
    try {
        if (slash != std::string::npos) {
            size_t pos1 = 0, pos2 = 0;
            const long long num = std::stoll(text.substr(0, slash), &pos1);
            const long long den = std::stoll(text.substr(slash + 1), &pos2);
            if (pos1 != slash || pos2 != text.size() - slash - 1 || den <= 0 || num < 0) {
                throw ConfigError("bad radius fraction '" + text + "'");
            }
            spec.value = static_cast<double>(num) / static_cast<double>(den);
        } else {
            size_t pos = 0;
            spec.value = std::stod(text, &pos);
            if (pos != text.size() || spec.value < 0.0) {
                throw ConfigError("bad radius '" + text + "'");
            }
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("bad radius '" + text + "'");
    }
    return spec;
}

std::vector<RadiusSpec> parse_radius_grid(const std::string& text) {
    std::vector<RadiusSpec> out;
    size_t begin = 0;
    while (begin <= text.size()) {
        const size_t comma = text.find(',', begin);
        const std::string part = text.substr(begin, comma == std::string::npos ? std::string::npos
                                                                               : comma - begin);
        if (!part.empty()) out.push_back(parse_radius(part));
        if (comma == std::string::npos) break;
        begin = comma + 1;
    }
    if (out.empty()) throw ConfigError("empty radius grid");
    std::sort(out.begin(), out.end(),
              [](const RadiusSpec& a, const RadiusSpec& b) { return a.value < b.value; });
    out.erase(std::unique(out.begin(), out.end(),
                          [](const RadiusSpec& a, const RadiusSpec& b) { return a.value == b.value; }),
              out.end());
    return out;
}

std::vector<RadiusSpec> default_radius_grid() {
    return {parse_radius("36/255"), parse_radius("72/255"), parse_radius("108/255")};
}

double natural_score(const FeatureExtractor& f, const std::vector<LoadedTriplet>& data, int threads) {
    if (data.empty()) throw ConfigError("natural_score needs a non-empty dataset");
    f.ensure_caches();
    std::vector<char> hit(data.size(), 0);
    parallel_for(data.size(), threads, [&](size_t i) {
        hit[i] = classify(f, data[i].t).decision == data[i].t.y ? 1 : 0;
    });
    size_t hits = 0;
    for (char h : hit) hits += static_cast<size_t>(h);
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

std::vector<Certificate> certify_dataset(const FeatureExtractor& f,
                                         const std::vector<LoadedTriplet>& data, int threads) {
    f.ensure_caches();
    std::vector<Certificate> certs(data.size());
    parallel_for(data.size(), threads, [&](size_t i) { certs[i] = certify(f, data[i].t); });
    return certs;
}

double certified_score(const std::vector<Certificate>& certs, double rho) {
    if (rho < 0.0) throw ConfigError("certified_score radius must be non-negative");
    if (certs.empty()) throw ConfigError("certified_score needs a non-empty dataset");
    size_t hits = 0;
    for (const Certificate& c : certs) {
        if (c.correct && c.valid && c.radius >= rho) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(certs.size());
}

double certified_score(const FeatureExtractor& f, const std::vector<LoadedTriplet>& data,
                       double rho, int threads) {
    return certified_score(certify_dataset(f, data, threads), rho);
}

double empirical_score(const FeatureExtractor& f, const std::vector<LoadedTriplet>& data,
                       const AttackConfig& cfg, int threads, std::vector<Tensor>* carry) {
    if (data.empty()) throw ConfigError("empirical_score needs a non-empty dataset");
    if (carry && carry->size() != data.size()) {
        carry->assign(data.size(), Tensor());
    }
    f.ensure_caches();
    std::vector<char> hit(data.size(), 0);
    parallel_for(data.size(), threads, [&](size_t i) {
        const Triplet& t = data[i].t;
        AttackConfig local = cfg;
        local.seed = Rng(cfg.seed).fork(hash64(data[i].id)).next_u64();
        AttackResult res = attack_triplet(f, t, local);
        if (carry) {
            const Tensor& prev = (*carry)[i];
            if (prev.size() == t.x.size() && prev.same_shape(t.x)) {
                AttackResult warmed = attack_triplet(f, t, local, &prev);
                if (warmed.best_loss > res.best_loss) res = warmed;
            }
            (*carry)[i] = res.delta;
        }
        Triplet attacked = t;
        attacked.x = add(t.x, res.delta);
        hit[i] = classify(f, attacked).decision == t.y ? 1 : 0;
    });
    size_t hits = 0;
    for (char h : hit) hits += static_cast<size_t>(h);
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

Histogram distance_histogram(const FeatureExtractor& f, const std::vector<Tensor>& images,
                             const AttackConfig& cfg, size_t bins, int threads) {
    if (bins < 2) throw ConfigError("distance_histogram needs at least 2 bins");
    if (images.empty()) throw ConfigError("distance_histogram needs images");
    f.ensure_caches();
    Histogram h;
    h.edges.resize(bins + 1);
    for (size_t i = 0; i <= bins; ++i) {
        h.edges[i] = 2.0 * static_cast<double>(i) / static_cast<double>(bins);
    }
    h.counts.assign(bins, 0);
    std::vector<double> dist(images.size(), 0.0);
    parallel_for(images.size(), threads, [&](size_t i) {
        AttackConfig local = cfg;
        local.objective = AttackObjective::embed_mse;
        local.seed = Rng(cfg.seed).fork(i + 1).next_u64();
        dist[i] = attack_embedding(f, images[i], local).final_distance;
    });
    for (double d : dist) {
        size_t bin = static_cast<size_t>(std::floor(d / 2.0 * static_cast<double>(bins)));
        if (bin >= bins) bin = bins - 1;
        ++h.counts[bin];
    }
    return h;
}

json certificate_json(const std::string& id, const Certificate& cert) {
    return json{{"id", id},       {"margin", cert.margin},   {"gap", cert.gap},
                {"radius", cert.radius}, {"correct", cert.correct}, {"valid", cert.valid}};
}

nlohmann::ordered_json eval_report(const FeatureExtractor& f,
                                   const std::vector<LoadedTriplet>& data,
                                   const EvalOptions& options) {
    using ojson = nlohmann::ordered_json;
    if (data.empty()) throw ConfigError("eval_report needs a non-empty dataset");
    const std::vector<RadiusSpec> radii =
        options.radii.empty() ? default_radius_grid() : options.radii;

    const double natural = natural_score(f, data, options.threads);
    const std::vector<Certificate> certs = certify_dataset(f, data, options.threads);

    size_t excluded = 0;
    for (const Certificate& c : certs) {
        if (c.correct && !c.valid) ++excluded;
    }

    ojson certified = ojson::object();
    ojson radii_decimal = ojson::object();
    ojson empirical = ojson::object();
    std::vector<Tensor> carry(data.size());
    double prev_empirical = 1.0;
    for (const RadiusSpec& r : radii) {
        const double cs = certified_score(certs, r.value);
        AttackConfig cfg;
        cfg.norm = AttackNorm::l2;
        cfg.objective = AttackObjective::triplet_ce;
        cfg.epsilon = r.value;
        cfg.steps = options.attack_steps;
        cfg.seed = options.attack_seed;
        const double es = r.value == 0.0
                              ? natural
                              : empirical_score(f, data, cfg, options.threads, &carry);
        // Soundness sandwich; a violation is an internal error, not bad data.
        if (cs > es + 1e-12 || es > natural + 1e-12) {
            throw std::logic_error("soundness sandwich violated at radius " + r.label +
                                   ": certified " + std::to_string(cs) + ", empirical " +
                                   std::to_string(es) + ", natural " + std::to_string(natural));
        }
        (void)prev_empirical;
        prev_empirical = es;
        certified[r.label] = cs;
        radii_decimal[r.label] = r.value;
        empirical[r.label] = es;
    }

    std::vector<Tensor> hist_images;
    for (size_t i = 0; i < data.size() && i < options.histogram_images; ++i) {
        hist_images.push_back(data[i].t.x);
    }
    AttackConfig hist_cfg;
    hist_cfg.norm = AttackNorm::l2;
    hist_cfg.objective = AttackObjective::embed_mse;
    hist_cfg.epsilon = options.histogram_epsilon;
    hist_cfg.steps = options.attack_steps;
    hist_cfg.seed = options.attack_seed;
    const Histogram hist =
        distance_histogram(f, hist_images, hist_cfg, options.histogram_bins, options.threads);

    ojson report;
    report["natural"] = natural;
    report["certified"] = certified;
    report["empirical"] = empirical;
    report["radii"] = radii_decimal;
    report["excluded_invalid_fraction"] =
        static_cast<double>(excluded) / static_cast<double>(data.size());
    report["histogram"] = {{"edges", hist.edges},
                           {"counts", hist.counts},
                           {"epsilon", options.histogram_epsilon},
                           {"images", hist_images.size()}};
    return report;
}

} // namespace certsim
