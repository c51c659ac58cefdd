#include "trajvae/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace trajvae {

namespace {

int draw_class(const std::vector<double>& probs, Rng& rng) {
    double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        acc += probs[c];
        if (u < acc) return static_cast<int>(c);
    }
    return static_cast<int>(probs.size()) - 1;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    double pos = q * static_cast<double>(sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

CohortStats compute_cohort_stats(const Cohort& cohort) {
    const FeatureSchema& schema = cohort.schema;
    int C = schema.num_continuous();
    CohortStats st;
    st.cont_mean.assign(static_cast<std::size_t>(C), 0.0);
    st.cont_sd.assign(static_cast<std::size_t>(C), 1.0);
    st.cont_median.assign(static_cast<std::size_t>(C), 0.0);

    for (int d = 0; d < C; ++d) {
        std::vector<double> vals;
        for (const PatientRecord& p : cohort.patients)
            for (int t = 0; t < p.T(); ++t)
                if (p.x_observed(t, d)) vals.push_back(p.xat(t, d));
        if (vals.empty()) continue;
        double m = 0.0;
        for (double v : vals) m += v;
        m /= static_cast<double>(vals.size());
        double var = 0.0;
        for (double v : vals) var += (v - m) * (v - m);
        var /= static_cast<double>(vals.size());
        std::sort(vals.begin(), vals.end());
        st.cont_mean[static_cast<std::size_t>(d)] = m;
        st.cont_sd[static_cast<std::size_t>(d)] = var > 0.0 ? std::sqrt(var) : 1.0;
        st.cont_median[static_cast<std::size_t>(d)] = quantile_sorted(vals, 0.5);
    }

    for (int d = C; d < schema.D(); ++d) {
        int K = schema.cat_classes(d);
        std::vector<double> counts(static_cast<std::size_t>(K), 0.0);
        double total = 0.0;
        for (const PatientRecord& p : cohort.patients)
            for (int t = 0; t < p.T(); ++t)
                if (p.x_observed(t, d)) {
                    counts[static_cast<std::size_t>(p.xat(t, d))] += 1.0;
                    total += 1.0;
                }
        std::vector<double> freq(static_cast<std::size_t>(K), 1.0 / K);
        int mode = 0;
        if (total > 0.0) {
            for (int c = 0; c < K; ++c) {
                freq[static_cast<std::size_t>(c)] = counts[static_cast<std::size_t>(c)] / total;
                if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(mode)]) mode = c;
            }
        }
        st.cat_freq.push_back(std::move(freq));
        st.cat_mode.push_back(mode);
    }

    for (int p = 0; p < schema.P(); ++p) {
        int K = schema.concepts[static_cast<std::size_t>(p)].num_classes;
        std::vector<double> counts(static_cast<std::size_t>(K), 0.0);
        double total = 0.0;
        for (const PatientRecord& pr : cohort.patients)
            for (int t = 0; t < pr.T(); ++t)
                if (pr.y_observed(t, p)) {
                    counts[static_cast<std::size_t>(pr.yat(t, p))] += 1.0;
                    total += 1.0;
                }
        std::vector<double> freq(static_cast<std::size_t>(K), 1.0 / K);
        int mode = 0;
        if (total > 0.0) {
            for (int c = 0; c < K; ++c) {
                freq[static_cast<std::size_t>(c)] = counts[static_cast<std::size_t>(c)] / total;
                if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(mode)]) mode = c;
            }
        }
        st.concept_freq.push_back(std::move(freq));
        st.concept_mode.push_back(mode);
    }
    return st;
}

PredictiveSamples predict(const ModelParameters& params, const ModelConfig& cfg,
                          const FeatureSchema& schema, const PatientRecord& patient, int k, int S,
                          int U, std::uint64_t seed, bool empirical_ci) {
    if (S < 1 || U < 1) throw ContractError("predict: S and U must be >= 1");
    int T = patient.T(), L = cfg.latent_dim, C = schema.num_continuous();

    Tape tape;
    ParamRefs refs = ParamRefs::build(tape, params);
    SequenceDist post = encode(tape, refs, cfg, schema, patient, k, nullptr);

    PredictiveSamples out;
    out.S = S;
    out.U = U;
    out.k = k;
    out.T = T;
    for (int p = 0; p < schema.P(); ++p)
        out.y_probs.push_back(Tensor::zeros({T, schema.concepts[static_cast<std::size_t>(p)].num_classes}));

    // all continuous draws per cell, for the summary
    std::vector<std::vector<double>> cell_draws(static_cast<std::size_t>(T * std::max(C, 1)));

    for (int s = 0; s < S; ++s) {
        Rng zrng(Rng::derive(seed, "z", static_cast<std::uint64_t>(s)));
        std::vector<Tensor> noise;
        noise.reserve(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
            Tensor e = Tensor::zeros({L});
            for (int l = 0; l < L; ++l) e.data[static_cast<std::size_t>(l)] = zrng.normal();
            noise.push_back(std::move(e));
        }
        std::vector<Tape::Var> z = reparameterize(tape, post, noise);

        Tensor zmat = Tensor::zeros({T, L});
        std::vector<Tensor> xu(static_cast<std::size_t>(U), Tensor::zeros({T, schema.D()}));
        Rng xrng(Rng::derive(seed, "x", static_cast<std::uint64_t>(s)));
        for (int t = 0; t < T; ++t) {
            const Tensor& zt = tape.value(z[static_cast<std::size_t>(t)]);
            for (int l = 0; l < L; ++l) zmat.at(t, l) = zt.data[static_cast<std::size_t>(l)];

            DecodeVars dec = decode_step(tape, refs, cfg, schema, z[static_cast<std::size_t>(t)],
                                         patient.tau[static_cast<std::size_t>(t)], patient.s, nullptr);
            std::vector<Tape::Var> guide =
                guide_step(tape, refs, cfg, schema, z[static_cast<std::size_t>(t)],
                           patient.tau[static_cast<std::size_t>(t)], patient.s, nullptr);
            for (int p = 0; p < schema.P(); ++p) {
                const Tensor& probs = tape.value(guide[static_cast<std::size_t>(p)]);
                for (int c = 0; c < probs.shape[0]; ++c)
                    out.y_probs[static_cast<std::size_t>(p)].at(t, c) +=
                        probs.data[static_cast<std::size_t>(c)] / static_cast<double>(S);
            }

            const Tensor* mu = dec.cont_mu >= 0 ? &tape.value(dec.cont_mu) : nullptr;
            const Tensor* sd = dec.cont_sd >= 0 ? &tape.value(dec.cont_sd) : nullptr;
            for (int u = 0; u < U; ++u) {
                for (int d = 0; d < C; ++d) {
                    double v = mu->data[static_cast<std::size_t>(d)] +
                               sd->data[static_cast<std::size_t>(d)] * xrng.normal();
                    xu[static_cast<std::size_t>(u)].at(t, d) = v;
                    cell_draws[static_cast<std::size_t>(t * std::max(C, 1) + d)].push_back(v);
                }
                for (std::size_t ci = 0; ci < dec.cat_probs.size(); ++ci) {
                    const Tensor& probs = tape.value(dec.cat_probs[ci]);
                    xu[static_cast<std::size_t>(u)].at(t, C + static_cast<int>(ci)) =
                        static_cast<double>(draw_class(probs.data, xrng));
                }
            }
        }
        out.z_draws.push_back(std::move(zmat));
        for (Tensor& t : xu) out.x_draws.push_back(std::move(t));
    }

    if (C > 0) {
        out.cont_mean = Tensor::zeros({T, C});
        out.cont_sd = Tensor::zeros({T, C});
        out.cont_lo = Tensor::zeros({T, C});
        out.cont_hi = Tensor::zeros({T, C});
        for (int t = 0; t < T; ++t)
            for (int d = 0; d < C; ++d) {
                std::vector<double>& draws = cell_draws[static_cast<std::size_t>(t * C + d)];
                double m = 0.0;
                for (double v : draws) m += v;
                m /= static_cast<double>(draws.size());
                double var = 0.0;
                for (double v : draws) var += (v - m) * (v - m);
                var /= static_cast<double>(draws.size());
                double sd = std::sqrt(var);
                out.cont_mean.at(t, d) = m;
                out.cont_sd.at(t, d) = sd;
                if (empirical_ci) {
                    std::sort(draws.begin(), draws.end());
                    out.cont_lo.at(t, d) = quantile_sorted(draws, 0.025);
                    out.cont_hi.at(t, d) = quantile_sorted(draws, 0.975);
                } else {
                    out.cont_lo.at(t, d) = m - 1.96 * sd;
                    out.cont_hi.at(t, d) = m + 1.96 * sd;
                }
            }
    }
    return out;
}

Tensor baseline_last_value(const FeatureSchema& schema, const PatientRecord& patient, int k,
                           const CohortStats& stats) {
    if (k < 0) throw ContractError("baseline_last_value: k must be >= 0");
    int T = patient.T(), C = schema.num_continuous();
    Tensor pred = Tensor::zeros({T, schema.D()});
    for (int d = 0; d < schema.D(); ++d) {
        double last = std::numeric_limits<double>::quiet_NaN();
        for (int t = 0; t < std::min(k, T); ++t)
            if (patient.x_observed(t, d)) last = patient.xat(t, d);
        if (std::isnan(last))
            last = d < C ? stats.cont_median[static_cast<std::size_t>(d)]
                         : static_cast<double>(stats.cat_mode[static_cast<std::size_t>(d - C)]);
        for (int t = 0; t < T; ++t) pred.at(t, d) = last;
    }
    return pred;
}

double baseline_cohort_draw(const FeatureSchema& schema, const CohortStats& stats, int feature,
                            Rng& rng) {
    int C = schema.num_continuous();
    if (feature < C)
        return stats.cont_mean[static_cast<std::size_t>(feature)] +
               stats.cont_sd[static_cast<std::size_t>(feature)] * rng.normal();
    return static_cast<double>(draw_class(stats.cat_freq[static_cast<std::size_t>(feature - C)], rng));
}

int baseline_cohort_concept_draw(const CohortStats& stats, int concept_idx, Rng& rng) {
    return draw_class(stats.concept_freq[static_cast<std::size_t>(concept_idx)], rng);
}

double coverage(const Tensor& lo, const Tensor& hi, const PatientRecord& patient,
                const FeatureSchema& schema, int k, long* cells_out) {
    int C = schema.num_continuous();
    long cells = 0, inside = 0;
    // conditioning covers array indices 0..k-1, so forecast cells start at index k
    for (int t = k; t < patient.T(); ++t) {
        for (int d = 0; d < C; ++d) {
            if (!patient.x_observed(t, d)) continue;
            ++cells;
            double v = patient.xat(t, d);
            if (v >= lo.at(t, d) && v <= hi.at(t, d)) ++inside;
        }
    }
    if (cells == 0) throw ContractError("coverage: no observed forecast cells");
    if (cells_out != nullptr) *cells_out = cells;
    return static_cast<double>(inside) / static_cast<double>(cells);
}

CalibrationCurve calibration_curve(const std::vector<double>& probs,
                                   const std::vector<std::uint8_t>& positive) {
    if (probs.size() != positive.size())
        throw DimensionError("calibration_curve: probs/labels size mismatch");
    const int B = 20;
    CalibrationCurve c;
    c.bin_edges.resize(B + 1);
    for (int b = 0; b <= B; ++b) c.bin_edges[static_cast<std::size_t>(b)] = static_cast<double>(b) / B;
    c.mean_predicted.assign(B, 0.0);
    c.fraction_positive.assign(B, 0.0);
    c.bin_counts.assign(B, 0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        double p = probs[i];
        if (p < 0.0 || p > 1.0) throw ContractError("calibration_curve: probability outside [0,1]");
        int b = std::min(B - 1, static_cast<int>(p * B));
        c.mean_predicted[static_cast<std::size_t>(b)] += p;
        c.fraction_positive[static_cast<std::size_t>(b)] += positive[i] ? 1.0 : 0.0;
        ++c.bin_counts[static_cast<std::size_t>(b)];
    }
    for (int b = 0; b < B; ++b) {
        long n = c.bin_counts[static_cast<std::size_t>(b)];
        if (n > 0) {
            c.mean_predicted[static_cast<std::size_t>(b)] /= static_cast<double>(n);
            c.fraction_positive[static_cast<std::size_t>(b)] /= static_cast<double>(n);
        }
    }
    return c;
}

double macro_f1(const std::vector<int>& predicted, const std::vector<int>& truth, int num_classes) {
    if (predicted.size() != truth.size()) throw DimensionError("macro_f1: size mismatch");
    if (predicted.empty()) throw ContractError("macro_f1: no labels");
    double sum = 0.0;
    int used = 0;
    for (int c = 0; c < num_classes; ++c) {
        long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            bool p = predicted[i] == c, t = truth[i] == c;
            if (p && t) ++tp;
            else if (p) ++fp;
            else if (t) ++fn;
        }
        if (tp + fp + fn == 0) continue;  // class absent from both sides
        double f1 = tp > 0 ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;
        sum += f1;
        ++used;
    }
    return used > 0 ? sum / static_cast<double>(used) : 0.0;
}

int eval_k_for(const EvalConfig& ecfg, int T) {
    int k = ecfg.k_fixed >= 0 ? ecfg.k_fixed
                              : static_cast<int>(std::ceil(ecfg.k_fraction * static_cast<double>(T)));
    return std::max(0, std::min(k, T - 1));
}

namespace {

struct PatientEval {
    double se_model = 0.0, se_last = 0.0, se_cohort = 0.0;
    long cont_cells = 0;
    long cover_inside = 0;
    std::vector<double> calib_probs;
    std::vector<std::uint8_t> calib_pos;
    std::vector<std::vector<int>> pred, truth, base;  // per concept
};

}  // namespace

EvalReport evaluate_cohort(const Cohort& cohort, const ModelParameters& params,
                           const ModelConfig& cfg, const EvalConfig& ecfg,
                           const CohortStats* train_stats) {
    const FeatureSchema& schema = cohort.schema;
    int C = schema.num_continuous(), P = schema.P();
    CohortStats local_stats;
    if (train_stats == nullptr) {
        local_stats = compute_cohort_stats(cohort);
        train_stats = &local_stats;
    }
    int n = cohort.size();
    std::vector<PatientEval> evals(static_cast<std::size_t>(n));

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        const PatientRecord& patient = cohort.patients[static_cast<std::size_t>(i)];
        PatientEval& ev = evals[static_cast<std::size_t>(i)];
        for (int p = 0; p < P; ++p) {
            ev.pred.emplace_back();
            ev.truth.emplace_back();
            ev.base.emplace_back();
        }
        int k = eval_k_for(ecfg, patient.T());
        if (k >= patient.T()) continue;

        PredictiveSamples ps = predict(params, cfg, schema, patient, k, ecfg.S, ecfg.U,
                                       Rng::derive(ecfg.seed, "predict", static_cast<std::uint64_t>(i)),
                                       ecfg.empirical_ci);
        Tensor last = baseline_last_value(schema, patient, k, *train_stats);
        Rng yrng(Rng::derive(ecfg.seed, "basey", static_cast<std::uint64_t>(i)));

        for (int t = k; t < patient.T(); ++t) {
            for (int d = 0; d < C; ++d) {
                if (!patient.x_observed(t, d)) continue;
                double v = patient.xat(t, d);
                double em = ps.cont_mean.at(t, d) - v;
                double el = last.at(t, d) - v;
                double ec = (*train_stats).cont_mean[static_cast<std::size_t>(d)] - v;
                ev.se_model += em * em;
                ev.se_last += el * el;
                ev.se_cohort += ec * ec;
                ++ev.cont_cells;
                if (v >= ps.cont_lo.at(t, d) && v <= ps.cont_hi.at(t, d)) ++ev.cover_inside;
            }
            for (int p = 0; p < P; ++p) {
                if (!patient.y_observed(t, p)) continue;
                const Tensor& probs = ps.y_probs[static_cast<std::size_t>(p)];
                int K = probs.shape[1];
                int argmax = 0;
                for (int c = 1; c < K; ++c)
                    if (probs.at(t, c) > probs.at(t, argmax)) argmax = c;
                int tr = static_cast<int>(patient.yat(t, p));
                ev.pred[static_cast<std::size_t>(p)].push_back(argmax);
                ev.truth[static_cast<std::size_t>(p)].push_back(tr);
                ev.base[static_cast<std::size_t>(p)].push_back(
                    baseline_cohort_concept_draw(*train_stats, p, yrng));
                for (int c = 0; c < K; ++c) {
                    ev.calib_probs.push_back(probs.at(t, c));
                    ev.calib_pos.push_back(tr == c ? 1 : 0);
                }
            }
        }
    }

    // fixed-order merge
    EvalReport rep;
    double se_model = 0.0, se_last = 0.0, se_cohort = 0.0;
    long inside = 0;
    std::vector<double> calib_probs;
    std::vector<std::uint8_t> calib_pos;
    std::vector<std::vector<int>> pred(static_cast<std::size_t>(P)), truth(static_cast<std::size_t>(P)),
        base(static_cast<std::size_t>(P));
    for (const PatientEval& ev : evals) {
        se_model += ev.se_model;
        se_last += ev.se_last;
        se_cohort += ev.se_cohort;
        rep.n_cont_cells += ev.cont_cells;
        inside += ev.cover_inside;
        calib_probs.insert(calib_probs.end(), ev.calib_probs.begin(), ev.calib_probs.end());
        calib_pos.insert(calib_pos.end(), ev.calib_pos.begin(), ev.calib_pos.end());
        for (int p = 0; p < P; ++p) {
            pred[static_cast<std::size_t>(p)].insert(pred[static_cast<std::size_t>(p)].end(),
                                                     ev.pred[static_cast<std::size_t>(p)].begin(),
                                                     ev.pred[static_cast<std::size_t>(p)].end());
            truth[static_cast<std::size_t>(p)].insert(truth[static_cast<std::size_t>(p)].end(),
                                                      ev.truth[static_cast<std::size_t>(p)].begin(),
                                                      ev.truth[static_cast<std::size_t>(p)].end());
            base[static_cast<std::size_t>(p)].insert(base[static_cast<std::size_t>(p)].end(),
                                                     ev.base[static_cast<std::size_t>(p)].begin(),
                                                     ev.base[static_cast<std::size_t>(p)].end());
        }
    }
    if (rep.n_cont_cells == 0) throw ContractError("evaluate_cohort: no observed forecast cells");
    rep.rmse_model = std::sqrt(se_model / static_cast<double>(rep.n_cont_cells));
    rep.rmse_last = std::sqrt(se_last / static_cast<double>(rep.n_cont_cells));
    rep.rmse_cohort = std::sqrt(se_cohort / static_cast<double>(rep.n_cont_cells));
    rep.coverage = static_cast<double>(inside) / static_cast<double>(rep.n_cont_cells);
    rep.calib = calibration_curve(calib_probs, calib_pos);
    double f1m = 0.0, f1c = 0.0;
    int counted = 0;
    for (int p = 0; p < P; ++p) {
        int K = schema.concepts[static_cast<std::size_t>(p)].num_classes;
        if (truth[static_cast<std::size_t>(p)].empty()) {
            rep.f1_model.push_back(std::numeric_limits<double>::quiet_NaN());
            rep.f1_cohort.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        rep.n_label_cells += static_cast<long>(truth[static_cast<std::size_t>(p)].size());
        double fm = macro_f1(pred[static_cast<std::size_t>(p)], truth[static_cast<std::size_t>(p)], K);
        double fc = macro_f1(base[static_cast<std::size_t>(p)], truth[static_cast<std::size_t>(p)], K);
        rep.f1_model.push_back(fm);
        rep.f1_cohort.push_back(fc);
        f1m += fm;
        f1c += fc;
        ++counted;
    }
    if (counted > 0) {
        rep.macro_f1_model = f1m / static_cast<double>(counted);
        rep.macro_f1_cohort = f1c / static_cast<double>(counted);
    }
    return rep;
}

void write_eval_csv(const EvalReport& report, const std::string& path,
                    const std::string& header_comment) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw ParseError(tmp + ": cannot open for writing");
        if (!header_comment.empty()) f << "# " << header_comment << "\n";
        f << "section,name,value1,value2,value3\n";
        f << "summary,rmse_model," << report.rmse_model << ",,\n";
        f << "summary,rmse_last_value," << report.rmse_last << ",,\n";
        f << "summary,rmse_cohort," << report.rmse_cohort << ",,\n";
        f << "summary,coverage," << report.coverage << ",,\n";
        f << "summary,macro_f1_model," << report.macro_f1_model << ",,\n";
        f << "summary,macro_f1_cohort," << report.macro_f1_cohort << ",,\n";
        f << "summary,n_cont_cells," << report.n_cont_cells << ",,\n";
        f << "summary,n_label_cells," << report.n_label_cells << ",,\n";
        for (std::size_t p = 0; p < report.f1_model.size(); ++p)
            f << "f1,concept" << p << ',' << report.f1_model[p] << ',' << report.f1_cohort[p] << ",\n";
        for (std::size_t b = 0; b < report.calib.bin_counts.size(); ++b)
            f << "calibration,bin" << b << ',' << report.calib.mean_predicted[b] << ','
              << report.calib.fraction_positive[b] << ',' << report.calib.bin_counts[b] << "\n";
    }
    std::rename(tmp.c_str(), path.c_str());
}

}  // namespace trajvae
