#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "certsim/attacks.hpp"
#include "certsim/config.hpp"
#include "certsim/data_io.hpp"
#include "certsim/errors.hpp"
#include "certsim/evaluation.hpp"
#include "certsim/lstn.hpp"
#include "certsim/selfcheck.hpp"
#include "certsim/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<certsim::LoadedTriplet> load_manifest_dataset(const std::string& manifest_path) {
    const auto manifest = certsim::DatasetManifest::load(manifest_path);
    const std::string base = fs::path(manifest_path).parent_path().string();
    return certsim::load_dataset(manifest, base.empty() ? "." : base);
}

std::ofstream open_output(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw certsim::IoError("cannot open " + path + " for writing");
    return os;
}

// Deterministic split: every k-th triplet goes to validation.
void split_validation(const std::vector<certsim::LoadedTriplet>& all, double val_frac,
                      std::vector<certsim::LoadedTriplet>& train,
                      std::vector<certsim::LoadedTriplet>& val) {
    if (val_frac <= 0.0 || all.size() < 5) {
        train = all;
        return;
    }
    const size_t stride = std::max<size_t>(2, static_cast<size_t>(1.0 / val_frac));
    for (size_t i = 0; i < all.size(); ++i) {
        if (i % stride == stride - 1) val.push_back(all[i]);
        else train.push_back(all[i]);
    }
}

double excluded_fraction(const std::vector<certsim::Certificate>& certs) {
    size_t excluded = 0;
    for (const auto& c : certs) {
        if (c.correct && !c.valid) ++excluded;
    }
    return static_cast<double>(excluded) / static_cast<double>(certs.size());
}

certsim::LogSink log_sink(std::ostream& primary, std::ofstream* file) {
    return [&primary, file](const certsim::EpochLog& e) {
        json j = {{"phase", e.phase}, {"epoch", e.epoch}, {"loss", e.loss}};
        if (e.val_natural >= 0.0) j["val_natural"] = e.val_natural;
        primary << j.dump() << "\n";
        if (file) (*file) << j.dump() << "\n";
    };
}

struct CommonTrainArgs {
    std::string config_path;
    std::string data_path;
    std::string out_path;
    std::string log_path;
    double val_frac = 0.2;
    long long epochs_override = -1;
    long long seed_override = -1;
    double lr_override = -1.0;
};

certsim::RunConfig resolve_config(const CommonTrainArgs& args, double default_lr,
                                  size_t default_epochs) {
    certsim::RunConfig cfg;
    cfg.train.learning_rate = default_lr;
    cfg.train.epochs = default_epochs;
    if (!args.config_path.empty()) cfg = certsim::load_config(args.config_path);
    if (args.epochs_override >= 0) cfg.train.epochs = static_cast<size_t>(args.epochs_override);
    if (args.seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(args.seed_override);
    if (args.lr_override > 0.0) cfg.train.learning_rate = args.lr_override;
    cfg.train.validate();
    cfg.augment.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"certsim: certifiably robust perceptual similarity toolkit"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "dataset-parallel worker count (1 = deterministic mode)");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic 2AFC triplet dataset");
    size_t gen_n = 100, gen_size = 16;
    uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--n", gen_n, "number of triplets")->required();
    gen->add_option("--size", gen_size, "image side length");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory")->required();

    // distill
    auto* distill_cmd = app.add_subcommand("distill", "step 1: distill a teacher into the 1-Lipschitz student");
    CommonTrainArgs distill_args;
    std::string teacher_spec = "synthetic";
    uint64_t model_seed = 1;
    size_t embed_dim = 32;
    uint64_t teacher_seed = 99;
    distill_cmd->add_option("--config", distill_args.config_path, "flat key=value config file");
    distill_cmd->add_option("--data", distill_args.data_path, "triplet manifest (JSONL)")->required();
    distill_cmd->add_option("--teacher", teacher_spec, "'synthetic' or an embedding store file");
    distill_cmd->add_option("--out", distill_args.out_path, "output checkpoint")->required();
    distill_cmd->add_option("--log", distill_args.log_path, "JSONL training log file");
    distill_cmd->add_option("--val-frac", distill_args.val_frac, "validation fraction");
    distill_cmd->add_option("--epochs", distill_args.epochs_override, "override config epochs");
    distill_cmd->add_option("--seed", distill_args.seed_override, "override config seed");
    distill_cmd->add_option("--lr", distill_args.lr_override, "override learning rate");
    distill_cmd->add_option("--model-seed", model_seed, "weight initialization seed");
    distill_cmd->add_option("--embed-dim", embed_dim, "embedding dimension");
    distill_cmd->add_option("--teacher-seed", teacher_seed, "synthetic teacher seed");

    // finetune
    auto* finetune_cmd = app.add_subcommand("finetune", "step 2: hinge fine-tuning on 2AFC triplets");
    CommonTrainArgs ft_args;
    std::string ft_model;
    double ft_margin_override = -1.0;
    finetune_cmd->add_option("--config", ft_args.config_path, "flat key=value config file");
    finetune_cmd->add_option("--data", ft_args.data_path, "triplet manifest (JSONL)")->required();
    finetune_cmd->add_option("--model", ft_model, "input checkpoint")->required();
    finetune_cmd->add_option("--out", ft_args.out_path, "output checkpoint")->required();
    finetune_cmd->add_option("--log", ft_args.log_path, "JSONL training log file");
    finetune_cmd->add_option("--val-frac", ft_args.val_frac, "validation fraction");
    finetune_cmd->add_option("--epochs", ft_args.epochs_override, "override config epochs");
    finetune_cmd->add_option("--seed", ft_args.seed_override, "override config seed");
    finetune_cmd->add_option("--lr", ft_args.lr_override, "override learning rate");
    finetune_cmd->add_option("--margin", ft_margin_override, "override hinge margin");

    // certify
    auto* certify_cmd = app.add_subcommand("certify", "emit certificates and certified scores");
    std::string cert_model, cert_data, cert_out, cert_radii = "36/255,72/255,108/255";
    certify_cmd->add_option("--model", cert_model, "checkpoint")->required();
    certify_cmd->add_option("--data", cert_data, "triplet manifest")->required();
    certify_cmd->add_option("--radii", cert_radii, "comma-separated radius grid");
    certify_cmd->add_option("--out", cert_out, "certificates JSONL output")->required();

    // attack
    auto* attack_cmd = app.add_subcommand("attack", "PGD attack over a dataset");
    std::string atk_model, atk_data, atk_out, atk_norm = "l2", atk_objective = "triplet_ce";
    double atk_eps = 1.0, atk_step_size = 0.0;
    size_t atk_steps = 50, atk_restarts = 1;
    uint64_t atk_seed = 0;
    attack_cmd->add_option("--model", atk_model, "checkpoint")->required();
    attack_cmd->add_option("--data", atk_data, "triplet manifest")->required();
    attack_cmd->add_option("--norm", atk_norm, "l2 or linf")
        ->check(CLI::IsMember({"l2", "linf"}));
    attack_cmd->add_option("--eps", atk_eps, "perturbation budget")->required();
    attack_cmd->add_option("--steps", atk_steps, "PGD steps");
    attack_cmd->add_option("--step-size", atk_step_size, "PGD step size (default 2.5 eps / steps)");
    attack_cmd->add_option("--objective", atk_objective, "triplet_ce or embed_mse")
        ->check(CLI::IsMember({"triplet_ce", "embed_mse"}));
    attack_cmd->add_option("--restarts", atk_restarts, "random restarts per item");
    attack_cmd->add_option("--seed", atk_seed, "attack seed");
    attack_cmd->add_option("--out", atk_out, "results JSONL output")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "full evaluation report");
    std::string eval_model, eval_data, eval_out, eval_radii = "36/255,72/255,108/255";
    size_t eval_steps = 50, eval_bins = 20, eval_hist_images = 50;
    double eval_hist_eps = 1.0;
    uint64_t eval_seed = 0;
    eval_cmd->add_option("--model", eval_model, "checkpoint")->required();
    eval_cmd->add_option("--data", eval_data, "triplet manifest")->required();
    eval_cmd->add_option("--out", eval_out, "report JSON output")->required();
    eval_cmd->add_option("--radii", eval_radii, "comma-separated radius grid");
    eval_cmd->add_option("--steps", eval_steps, "PGD steps");
    eval_cmd->add_option("--seed", eval_seed, "attack seed");
    eval_cmd->add_option("--bins", eval_bins, "histogram bins");
    eval_cmd->add_option("--hist-eps", eval_hist_eps, "histogram attack budget");
    eval_cmd->add_option("--hist-images", eval_hist_images, "histogram image cap");

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "nearest neighbors of a query image");
    std::string rt_model, rt_index, rt_query;
    size_t rt_topk = 5;
    retrieve_cmd->add_option("--model", rt_model, "checkpoint")->required();
    retrieve_cmd->add_option("--index", rt_index, "triplet manifest; reference images form the corpus")
        ->required();
    retrieve_cmd->add_option("--query", rt_query, "query image (LSTN)")->required();
    retrieve_cmd->add_option("--topk", rt_topk, "number of neighbors");

    // selfcheck
    auto* selfcheck_cmd = app.add_subcommand("selfcheck", "run the built-in verification suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) {
            const auto manifest = certsim::generate_synthetic(gen_n, gen_size, gen_seed, gen_out);
            std::cout << json{{"triplets", manifest.entries.size()},
                              {"manifest", (fs::path(gen_out) / "triplets.jsonl").string()}}
                             .dump()
                      << "\n";
        } else if (distill_cmd->parsed()) {
            const auto all = load_manifest_dataset(distill_args.data_path);
            std::vector<certsim::LoadedTriplet> train_set, val_set;
            split_validation(all, distill_args.val_frac, train_set, val_set);

            certsim::RunConfig cfg = resolve_config(distill_args, 1e-3, 10);
            certsim::EmbeddingStore teacher =
                teacher_spec == "synthetic"
                    ? certsim::build_synthetic_teacher_store(all, embed_dim, teacher_seed)
                    : certsim::EmbeddingStore::load(teacher_spec);
            certsim::check_teacher_coverage(teacher, train_set);
            if (teacher.dim() != embed_dim) embed_dim = teacher.dim();

            const size_t image_size = all.front().t.x.shape()[1];
            certsim::FeatureExtractor student = certsim::make_default_extractor(
                model_seed, image_size, all.front().t.x.shape()[0], embed_dim);
            student.project = false;

            std::ofstream logf;
            if (!distill_args.log_path.empty()) logf = open_output(distill_args.log_path);
            certsim::distill(student, train_set, teacher, cfg.train, cfg.augment,
                             val_set.empty() ? nullptr : &val_set,
                             log_sink(std::cout, distill_args.log_path.empty() ? nullptr : &logf));
            student.project = true;
            certsim::save_model(student, distill_args.out_path);
        } else if (finetune_cmd->parsed()) {
            const auto all = load_manifest_dataset(ft_args.data_path);
            std::vector<certsim::LoadedTriplet> train_set, val_set;
            split_validation(all, ft_args.val_frac, train_set, val_set);

            certsim::RunConfig cfg = resolve_config(ft_args, 1e-4, 15);
            if (ft_margin_override > 0.0) cfg.train.hinge_margin = ft_margin_override;
            certsim::FeatureExtractor student = certsim::load_model(ft_model);
            student.project = true;

            std::ofstream logf;
            if (!ft_args.log_path.empty()) logf = open_output(ft_args.log_path);
            certsim::finetune(student, train_set, cfg.train,
                              val_set.empty() ? nullptr : &val_set,
                              log_sink(std::cout, ft_args.log_path.empty() ? nullptr : &logf));
            certsim::save_model(student, ft_args.out_path);
        } else if (certify_cmd->parsed()) {
            const auto data = load_manifest_dataset(cert_data);
            const auto radii = certsim::parse_radius_grid(cert_radii);
            certsim::FeatureExtractor model = certsim::load_model(cert_model);
            const auto certs = certsim::certify_dataset(model, data, threads);

            auto os = open_output(cert_out);
            for (size_t i = 0; i < data.size(); ++i) {
                os << certsim::certificate_json(data[i].id, certs[i]).dump() << "\n";
            }
            nlohmann::ordered_json scores = nlohmann::ordered_json::object();
            nlohmann::ordered_json decimals = nlohmann::ordered_json::object();
            for (const auto& r : radii) {
                scores[r.label] = certsim::certified_score(certs, r.value);
                decimals[r.label] = r.value;
            }
            nlohmann::ordered_json summary;
            summary["certified"] = scores;
            summary["radii"] = decimals;
            summary["excluded_invalid_fraction"] =
                static_cast<double>(excluded_fraction(certs));
            std::cout << summary.dump(2) << "\n";
        } else if (attack_cmd->parsed()) {
            const auto data = load_manifest_dataset(atk_data);
            certsim::FeatureExtractor model = certsim::load_model(atk_model);
            certsim::AttackConfig cfg;
            cfg.norm = atk_norm == "l2" ? certsim::AttackNorm::l2 : certsim::AttackNorm::linf;
            cfg.objective = atk_objective == "triplet_ce" ? certsim::AttackObjective::triplet_ce
                                                          : certsim::AttackObjective::embed_mse;
            cfg.epsilon = atk_eps;
            cfg.steps = atk_steps;
            cfg.step_size = atk_step_size;
            cfg.seed = atk_seed;

            model.ensure_caches();
            auto os = open_output(atk_out);
            std::vector<json> rows(data.size());
            std::vector<char> kept(data.size(), 0);
            certsim::parallel_for(data.size(), threads, [&](size_t i) {
                const auto& lt = data[i];
                certsim::AttackConfig local = cfg;
                local.seed = certsim::Rng(cfg.seed).fork(certsim::hash64(lt.id)).next_u64();
                certsim::AttackResult best;
                bool have = false;
                for (size_t r = 0; r < std::max<size_t>(1, atk_restarts); ++r) {
                    certsim::AttackConfig restart = local;
                    restart.seed = certsim::Rng(local.seed).fork(r).next_u64();
                    certsim::AttackResult res =
                        cfg.objective == certsim::AttackObjective::triplet_ce
                            ? certsim::attack_triplet(model, lt.t, restart)
                            : certsim::attack_embedding(model, lt.t.x, restart);
                    if (!have || res.best_loss > best.best_loss) {
                        best = std::move(res);
                        have = true;
                    }
                }
                bool flipped = false;
                if (cfg.objective == certsim::AttackObjective::triplet_ce) {
                    certsim::Triplet attacked = lt.t;
                    attacked.x = certsim::add(lt.t.x, best.delta);
                    const int decision = certsim::classify(model, attacked).decision;
                    flipped = decision != certsim::classify(model, lt.t).decision;
                    kept[i] = decision == lt.t.y ? 1 : 0;
                }
                rows[i] = json{{"id", lt.id},
                               {"epsilon", cfg.epsilon},
                               {"norm", atk_norm},
                               {"flipped", flipped},
                               {"final_loss", best.best_loss},
                               {"final_distance", best.final_distance}};
            });
            for (const auto& row : rows) os << row.dump() << "\n";
            if (cfg.objective == certsim::AttackObjective::triplet_ce) {
                size_t hits = 0;
                for (char k : kept) hits += static_cast<size_t>(k);
                std::cout << json{{"empirical_score",
                                   static_cast<double>(hits) / static_cast<double>(data.size())},
                                  {"epsilon", cfg.epsilon},
                                  {"norm", atk_norm}}
                                 .dump()
                          << "\n";
            } else {
                double mean_d = 0.0;
                for (const auto& row : rows) mean_d += row["final_distance"].get<double>();
                mean_d /= static_cast<double>(rows.size());
                std::cout << json{{"mean_distance", mean_d}, {"epsilon", cfg.epsilon}, {"norm", atk_norm}}
                                 .dump()
                          << "\n";
            }
        } else if (eval_cmd->parsed()) {
            const auto data = load_manifest_dataset(eval_data);
            certsim::FeatureExtractor model = certsim::load_model(eval_model);
            certsim::EvalOptions options;
            options.radii = certsim::parse_radius_grid(eval_radii);
            options.attack_steps = eval_steps;
            options.attack_seed = eval_seed;
            options.histogram_bins = eval_bins;
            options.histogram_epsilon = eval_hist_eps;
            options.histogram_images = eval_hist_images;
            options.threads = threads;
            const auto report = certsim::eval_report(model, data, options);
            auto os = open_output(eval_out);
            os << report.dump(2) << "\n";
            std::cout << report.dump(2) << "\n";
        } else if (retrieve_cmd->parsed()) {
            const auto data = load_manifest_dataset(rt_index);
            certsim::FeatureExtractor model = certsim::load_model(rt_model);
            std::vector<std::pair<std::string, certsim::Tensor>> corpus;
            corpus.reserve(data.size());
            for (const auto& lt : data) corpus.emplace_back(lt.id, lt.t.x);
            const auto index = certsim::build_retrieval_index(model, corpus);
            const certsim::Tensor query = certsim::load_tensor(rt_query);
            const auto hits = certsim::retrieve(index, model, query, rt_topk);
            for (size_t i = 0; i < hits.size(); ++i) {
                std::cout << json{{"rank", i + 1}, {"id", hits[i].id}, {"distance", hits[i].distance}}
                                 .dump()
                          << "\n";
            }
        } else if (selfcheck_cmd->parsed()) {
            return certsim::run_selfcheck(std::cout) ? 0 : 3;
        }
    } catch (const certsim::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
