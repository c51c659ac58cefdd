#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "trajvae/checkpoint.hpp"
#include "trajvae/cluster.hpp"
#include "trajvae/forecast.hpp"
#include "trajvae/selftest.hpp"
#include "trajvae/simulate.hpp"
#include "trajvae/train.hpp"

using namespace trajvae;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// every artifact header carries the hash of the effective configuration and
// the global seed
std::string meta_line(const std::string& config_repr, std::uint64_t seed) {
    return "config_hash=" + hex64(fnv1a(config_repr)) + " seed=" + std::to_string(seed);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void atomic_write(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw ParseError(tmp + ": cannot open for writing");
        out << content;
    }
    std::rename(tmp.c_str(), path.c_str());
}

Cohort load_cohort(const std::string& path, int min_visits) {
    Cohort c = parse_cohort(path);
    if (min_visits > 1) c = filter_min_visits(c, min_visits);
    if (c.patients.empty()) throw ContractError(path + ": no patients left after min-visits filter");
    return c;
}

void parse_k_spec(const std::string& spec, EvalConfig& ecfg) {
    if (spec.empty()) return;
    if (spec.find('.') != std::string::npos) {
        ecfg.k_fraction = std::stod(spec);
        ecfg.k_fixed = -1;
        if (ecfg.k_fraction < 0.0 || ecfg.k_fraction > 1.0)
            throw ContractError("--k fraction must be in [0,1]");
    } else {
        ecfg.k_fixed = std::stoi(spec);
        if (ecfg.k_fixed < 0) throw ContractError("--k must be >= 0");
    }
}

int find_patient(const Cohort& cohort, const std::string& id) {
    for (int i = 0; i < cohort.size(); ++i)
        if (cohort.patients[static_cast<std::size_t>(i)].id == id) return i;
    throw ContractError("patient id '" + id + "' not found in cohort");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Guided temporal latent-variable model: simulate, train, forecast, cluster"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    int threads = 0;
    int min_visits = 5;
    app.add_option("--seed", seed, "Global seed; every stage derives its own stream from it");
    app.add_option("--threads", threads, "Worker thread cap (0 = runtime default)");
    app.add_option("--min-visits", min_visits, "Drop patients with fewer visits")->capture_default_str();

    // simulate
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic cohort");
    std::string sim_preset = "two_group", sim_config_path, sim_out;
    int sim_n = -1;
    sim->add_option("--preset", sim_preset, "two_group | bundles | ssc_analog")->capture_default_str();
    sim->add_option("--config", sim_config_path, "Simulator config JSON (overrides --preset)");
    sim->add_option("--out", sim_out, "Output cohort file")->required();
    sim->add_option("--n", sim_n, "Override patient count");

    // train
    auto* tr = app.add_subcommand("train", "Fit the model on a cohort");
    std::string tr_cohort, tr_out, tr_model_config, tr_history, tr_warm;
    TrainConfig tcfg;
    ModelConfig default_mcfg;
    int tr_latent = -1, tr_lstm = -1, tr_dense = -1;
    bool tr_deterministic = false, tr_fixed_sigma = false, tr_k_all = false;
    double tr_train_frac = 0.7, tr_val_frac = 0.15;
    tr->add_option("--cohort", tr_cohort)->required();
    tr->add_option("--out", tr_out, "Checkpoint path")->required();
    tr->add_option("--model-config", tr_model_config, "Model config JSON");
    tr->add_option("--history", tr_history, "Per-epoch loss CSV");
    tr->add_option("--warm-start", tr_warm, "Checkpoint to resume from");
    tr->add_option("--epochs", tcfg.max_epochs)->capture_default_str();
    tr->add_option("--batch-size", tcfg.batch_size)->capture_default_str();
    tr->add_option("--patience", tcfg.patience)->capture_default_str();
    tr->add_option("--alpha", tcfg.alpha, "Guidance weight")->capture_default_str();
    tr->add_option("--beta", tcfg.beta, "KL weight")->capture_default_str();
    tr->add_option("--lr", tcfg.lr)->capture_default_str();
    tr->add_option("--mc-samples", tcfg.mc_samples)->capture_default_str();
    tr->add_flag("--k-all", tr_k_all, "Sum the objective over every k instead of subsampling");
    tr->add_option("--k-subsample", tcfg.k_subsample)->capture_default_str();
    tr->add_option("--latent-dim", tr_latent);
    tr->add_option("--lstm-hidden", tr_lstm);
    tr->add_option("--dense-hidden", tr_dense);
    tr->add_option("--dropout", default_mcfg.dropout)->capture_default_str();
    tr->add_flag("--deterministic", tr_deterministic, "Deterministic encoder, no KL");
    tr->add_flag("--fixed-sigma", tr_fixed_sigma, "Fix the likelihood sd at 1");
    tr->add_option("--train-frac", tr_train_frac)->capture_default_str();
    tr->add_option("--val-frac", tr_val_frac)->capture_default_str();

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Forecast metrics report");
    std::string ev_ckpt, ev_cohort, ev_report, ev_k;
    EvalConfig ecfg;
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--cohort", ev_cohort)->required();
    ev->add_option("--report", ev_report, "Report CSV")->required();
    ev->add_option("--k", ev_k, "Conditioning visits: integer or fraction of T");
    ev->add_option("--S", ecfg.S, "Latent draws")->capture_default_str();
    ev->add_option("--U", ecfg.U, "Observation draws per latent draw")->capture_default_str();
    bool ev_empirical = false;
    ev->add_flag("--empirical-ci", ev_empirical, "Quantile CIs instead of mean +- 1.96 sd");

    // forecast
    auto* fc = app.add_subcommand("forecast", "Per-patient predictive summaries");
    std::string fc_ckpt, fc_cohort, fc_out, fc_k, fc_patient;
    int fc_S = 50, fc_U = 5;
    fc->add_option("--checkpoint", fc_ckpt)->required();
    fc->add_option("--cohort", fc_cohort)->required();
    fc->add_option("--out", fc_out)->required();
    fc->add_option("--k", fc_k, "Conditioning visits: integer or fraction of T");
    fc->add_option("--patient", fc_patient, "Single patient id (default: all)");
    fc->add_option("--S", fc_S)->capture_default_str();
    fc->add_option("--U", fc_U)->capture_default_str();

    // cluster
    auto* cl = app.add_subcommand("cluster", "k-medoids over DTW latent distances");
    std::string cl_ckpt, cl_cohort, cl_out, cl_profiles;
    int cl_k = 3, cl_window = -1;
    cl->add_option("--checkpoint", cl_ckpt)->required();
    cl->add_option("--cohort", cl_cohort)->required();
    cl->add_option("--k", cl_k)->capture_default_str();
    cl->add_option("--out", cl_out, "Assignments CSV")->required();
    cl->add_option("--profiles", cl_profiles, "Medoid concept-probability CSV (default <out>.profiles.csv)");
    cl->add_option("--window", cl_window, "DTW band half-width (-1 = none)")->capture_default_str();

    // neighbors
    auto* nb = app.add_subcommand("neighbors", "Nearest patients by latent DTW distance");
    std::string nb_ckpt, nb_cohort, nb_patient, nb_out;
    int nb_k = 3;
    nb->add_option("--checkpoint", nb_ckpt)->required();
    nb->add_option("--cohort", nb_cohort)->required();
    nb->add_option("--patient", nb_patient)->required();
    nb->add_option("--k", nb_k)->capture_default_str();
    nb->add_option("--out", nb_out, "Optional CSV output");

    // export-latent
    auto* ex = app.add_subcommand("export-latent", "Posterior-mean latent trajectories as CSV");
    std::string ex_ckpt, ex_cohort, ex_out;
    ex->add_option("--checkpoint", ex_ckpt)->required();
    ex->add_option("--cohort", ex_cohort)->required();
    ex->add_option("--out", ex_out)->required();

    app.add_subcommand("selftest", "Run the built-in verification suites");

    CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    try {
        if (app.got_subcommand("simulate")) {
            SimConfig cfg;
            if (!sim_config_path.empty())
                cfg = SimConfig::from_json(read_file(sim_config_path));
            else
                cfg = SimConfig::from_json("{\"preset\":\"" + sim_preset + "\"}");
            if (sim_n > 0) cfg.n_patients = sim_n;
            cfg.seed = Rng::derive(seed, "simulate");
            SimResult res = simulate_cohort(cfg);
            write_cohort(res.cohort, sim_out, meta_line(cfg.to_json(), seed));
        } else if (app.got_subcommand("train")) {
            Cohort cohort = load_cohort(tr_cohort, min_visits);
            SplitResult parts = split(cohort, tr_train_frac, tr_val_frac,
                                      1.0 - tr_train_frac - tr_val_frac, Rng::derive(seed, "split"));
            ScalerStats scaler = standardize(parts.train);
            standardize(parts.val, scaler);

            ModelConfig mcfg;
            if (!tr_model_config.empty()) {
                std::string text = read_file(tr_model_config);
                // accept both a bare model config and the bundled
                // {"schema":..., "model":...} wrapper
                auto j = nlohmann::json::parse(text);
                if (j.contains("model")) text = j["model"].dump();
                mcfg = ModelConfig::from_json(text, cohort.schema);
            } else {
                mcfg = default_mcfg;
                if (tr_latent > 0) mcfg.latent_dim = tr_latent;
                if (tr_lstm > 0) mcfg.lstm_hidden = tr_lstm;
                if (tr_dense > 0) mcfg.dense_hidden = tr_dense;
                mcfg.probabilistic = !tr_deterministic;
                mcfg.learn_sigma = !tr_fixed_sigma;
                mcfg.partition = GuidancePartition::even_blocks(cohort.schema, mcfg.latent_dim);
            }
            tcfg.seed = Rng::derive(seed, "train");
            if (tr_k_all) tcfg.k_strategy = TrainConfig::KStrategy::All;

            ModelParameters warm = ModelParameters::create(mcfg, cohort.schema);
            const ModelParameters* warm_ptr = nullptr;
            if (!tr_warm.empty()) {
                Checkpoint prev = load_checkpoint(tr_warm);
                warm = prev.params;
                warm_ptr = &warm;
            }
            TrainedModel tm = train(parts.train, parts.val, mcfg, tcfg, warm_ptr);
            if (tm.diverged)
                std::cerr << "warning: training diverged, keeping best checkpoint so far\n";

            Checkpoint ckpt;
            ckpt.schema = cohort.schema;
            ckpt.config = mcfg;
            ckpt.scaler = scaler;
            ckpt.params = tm.params;
            ckpt.meta = meta_line(mcfg.to_json(), seed);
            save_checkpoint(ckpt, tr_out);
            if (!tr_history.empty()) write_history_csv(tm.history, tr_history, ckpt.meta);
        } else if (app.got_subcommand("evaluate")) {
            Checkpoint ckpt = load_checkpoint(ev_ckpt);
            Cohort cohort = load_cohort(ev_cohort, min_visits);
            standardize(cohort, ckpt.scaler);
            parse_k_spec(ev_k, ecfg);
            ecfg.seed = Rng::derive(seed, "evaluate");
            ecfg.empirical_ci = ev_empirical;
            EvalReport rep = evaluate_cohort(cohort, ckpt.params, ckpt.config, ecfg);
            write_eval_csv(rep, ev_report, meta_line(ckpt.meta + ev_k, seed));
        } else if (app.got_subcommand("forecast")) {
            Checkpoint ckpt = load_checkpoint(fc_ckpt);
            Cohort cohort = load_cohort(fc_cohort, min_visits);
            standardize(cohort, ckpt.scaler);
            EvalConfig kcfg;
            parse_k_spec(fc_k, kcfg);
            std::vector<int> targets;
            if (!fc_patient.empty())
                targets.push_back(find_patient(cohort, fc_patient));
            else
                for (int i = 0; i < cohort.size(); ++i) targets.push_back(i);

            std::ostringstream out;
            out << "# " << meta_line(ckpt.meta + fc_k, seed) << "\n";
            out << "patient,t,tau,section,name,v1,v2,v3,v4\n";
            const FeatureSchema& schema = cohort.schema;
            for (int i : targets) {
                const PatientRecord& p = cohort.patients[static_cast<std::size_t>(i)];
                int k = eval_k_for(kcfg, p.T());
                PredictiveSamples ps =
                    predict(ckpt.params, ckpt.config, schema, p, k, fc_S, fc_U,
                            Rng::derive(seed, "forecast", static_cast<std::uint64_t>(i)));
                for (int t = 0; t < p.T(); ++t) {
                    for (int d = 0; d < schema.num_continuous(); ++d)
                        out << p.id << ',' << t << ',' << p.tau[static_cast<std::size_t>(t)]
                            << ",cont," << schema.feature_name(d) << ',' << ps.cont_mean.at(t, d)
                            << ',' << ps.cont_sd.at(t, d) << ',' << ps.cont_lo.at(t, d) << ','
                            << ps.cont_hi.at(t, d) << "\n";
                    for (int c = 0; c < schema.P(); ++c) {
                        const Tensor& probs = ps.y_probs[static_cast<std::size_t>(c)];
                        for (int cls = 0; cls < probs.shape[1]; ++cls)
                            out << p.id << ',' << t << ',' << p.tau[static_cast<std::size_t>(t)]
                                << ",concept," << schema.concepts[static_cast<std::size_t>(c)].name
                                << ',' << cls << ',' << probs.at(t, cls) << ",,\n";
                    }
                }
            }
            atomic_write(fc_out, out.str());
        } else if (app.got_subcommand("cluster")) {
            Checkpoint ckpt = load_checkpoint(cl_ckpt);
            Cohort cohort = load_cohort(cl_cohort, min_visits);
            standardize(cohort, ckpt.scaler);
            std::vector<Tensor> lat = cohort_latent_trajectories(cohort, ckpt.params, ckpt.config);
            Tensor dist = pairwise_dtw(lat, cl_window);
            KMedoidsResult km = kmedoids(dist, cl_k, Rng::derive(seed, "kmedoids"));

            std::ostringstream out;
            out << "# " << meta_line(ckpt.meta + std::to_string(cl_k), seed) << "\n";
            out << "patient,cluster,is_medoid,distance_to_medoid\n";
            for (int i = 0; i < cohort.size(); ++i) {
                int c = km.assignment[static_cast<std::size_t>(i)];
                int m = km.medoids[static_cast<std::size_t>(c)];
                out << cohort.patients[static_cast<std::size_t>(i)].id << ',' << c << ','
                    << (i == m ? 1 : 0) << ',' << dist.at(i, m) << "\n";
            }
            atomic_write(cl_out, out.str());

            // decode each medoid's guidance profile: the "mean cluster
            // trajectory" stays an actual patient and remains decodable
            std::string ppath = cl_profiles.empty() ? cl_out + ".profiles.csv" : cl_profiles;
            std::ostringstream pout;
            pout << "# " << meta_line(ckpt.meta + std::to_string(cl_k), seed) << "\n";
            pout << "cluster,medoid_patient,t,tau,concept,class,prob\n";
            const FeatureSchema& schema = cohort.schema;
            for (std::size_t c = 0; c < km.medoids.size(); ++c) {
                const PatientRecord& p = cohort.patients[static_cast<std::size_t>(km.medoids[c])];
                Tape tape;
                ParamRefs refs = ParamRefs::build(tape, ckpt.params);
                SequenceDist post = encode(tape, refs, ckpt.config, schema, p, p.T(), nullptr);
                for (int t = 0; t < p.T(); ++t) {
                    std::vector<Tape::Var> probs =
                        guide_step(tape, refs, ckpt.config, schema, post.mu[static_cast<std::size_t>(t)],
                                   p.tau[static_cast<std::size_t>(t)], p.s, nullptr);
                    for (int j = 0; j < schema.P(); ++j) {
                        const Tensor& pr = tape.value(probs[static_cast<std::size_t>(j)]);
                        for (int cls = 0; cls < pr.shape[0]; ++cls)
                            pout << c << ',' << p.id << ',' << t << ','
                                 << p.tau[static_cast<std::size_t>(t)] << ','
                                 << schema.concepts[static_cast<std::size_t>(j)].name << ',' << cls
                                 << ',' << pr.data[static_cast<std::size_t>(cls)] << "\n";
                    }
                }
            }
            atomic_write(ppath, pout.str());
        } else if (app.got_subcommand("neighbors")) {
            Checkpoint ckpt = load_checkpoint(nb_ckpt);
            Cohort cohort = load_cohort(nb_cohort, min_visits);
            standardize(cohort, ckpt.scaler);
            int q = find_patient(cohort, nb_patient);
            std::vector<Tensor> lat = cohort_latent_trajectories(cohort, ckpt.params, ckpt.config);
            Tensor dist = pairwise_dtw(lat);
            std::vector<int> nn = knn(dist, q, nb_k);

            std::ostringstream out;
            out << "rank,patient,distance\n";
            for (std::size_t r = 0; r < nn.size(); ++r)
                out << r + 1 << ',' << cohort.patients[static_cast<std::size_t>(nn[r])].id << ','
                    << dist.at(q, nn[r]) << "\n";
            std::cout << out.str();
            if (!nb_out.empty())
                atomic_write(nb_out, "# " + meta_line(ckpt.meta + nb_patient, seed) + "\n" + out.str());
        } else if (app.got_subcommand("export-latent")) {
            Checkpoint ckpt = load_checkpoint(ex_ckpt);
            Cohort cohort = load_cohort(ex_cohort, min_visits);
            standardize(cohort, ckpt.scaler);
            std::vector<Tensor> lat = cohort_latent_trajectories(cohort, ckpt.params, ckpt.config);

            std::ostringstream out;
            out << "# " << meta_line(ckpt.meta, seed) << "\n";
            out << "patient,t,tau";
            for (int l = 0; l < ckpt.config.latent_dim; ++l) out << ",z" << l;
            out << "\n";
            for (int i = 0; i < cohort.size(); ++i) {
                const PatientRecord& p = cohort.patients[static_cast<std::size_t>(i)];
                const Tensor& H = lat[static_cast<std::size_t>(i)];
                for (int t = 0; t < p.T(); ++t) {
                    out << p.id << ',' << t << ',' << p.tau[static_cast<std::size_t>(t)];
                    for (int l = 0; l < ckpt.config.latent_dim; ++l) out << ',' << H.at(t, l);
                    out << "\n";
                }
            }
            atomic_write(ex_out, out.str());
        } else if (app.got_subcommand("selftest")) {
            if (!run_selftest(std::cout)) return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
