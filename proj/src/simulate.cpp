#include "trajvae/simulate.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "trajvae/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace trajvae {

using nlohmann::json;

void SimConfig::validate() const {
    if (n_patients < 1) throw ContractError("sim: n_patients < 1");
    if (T_min < 1 || T_max < T_min) throw ContractError("sim: bad T range");
    if (missing_rate_x < 0 || missing_rate_x > 1 || missing_rate_y < 0 || missing_rate_y > 1)
        throw ContractError("sim: missing rates must be in [0,1]");
    if (n_factors < 1) throw ContractError("sim: n_factors < 1");
    for (const auto& f : features) {
        if (static_cast<int>(f.loading.size()) != n_factors)
            throw ContractError("sim: feature '" + f.name + "' loading length != n_factors");
        if (f.categorical && static_cast<int>(f.thresholds.size()) != f.num_classes - 1)
            throw ContractError("sim: feature '" + f.name + "' needs num_classes-1 thresholds");
        if (!f.categorical && f.noise_sd <= 0) throw ContractError("sim: noise_sd must be > 0");
    }
    for (const auto& b : bundle_offsets)
        if (static_cast<int>(b.size()) != n_factors)
            throw ContractError("sim: bundle offset length != n_factors");
}

namespace {

FeatureSchema schema_from_config(const SimConfig& cfg) {
    FeatureSchema s;
    for (const auto& f : cfg.features) {
        if (f.categorical)
            s.categorical.push_back({f.name, f.num_classes});
        else
            s.continuous.push_back({f.name, "sim"});
    }
    for (int i = 0; i < cfg.n_static; ++i) s.statics.push_back({"s" + std::to_string(i), "real"});
    for (const auto& g : cfg.rules.groups) {
        s.concepts.push_back({g.group + "_involvement", 2, g.group});
        s.concepts.push_back({g.group + "_stage", 4, g.group});
    }
    s.validate();
    return s;
}

double factor_score(const SimFeature& f, const double* factors) {
    double acc = 0.0;
    for (std::size_t i = 0; i < f.loading.size(); ++i) acc += f.loading[i] * factors[i];
    return acc;
}

int bucket(const std::vector<double>& thresholds, double score) {
    int cls = 0;
    for (double th : thresholds)
        if (score > th) ++cls;
    return cls;
}

PatientRecord simulate_patient(const SimConfig& cfg, const FeatureSchema& schema, int index,
                               int bundle, Tensor* factors_out) {
    Rng rng(Rng::derive(cfg.seed, "patient", static_cast<std::uint64_t>(index)));
    PatientRecord p;
    p.id = "sim" + std::to_string(index);
    p.D = schema.D();
    p.P = schema.P();
    for (int i = 0; i < cfg.n_static; ++i) p.s.push_back(rng.normal());

    int T = cfg.T_min + rng.uniform_int(cfg.T_max - cfg.T_min + 1);
    p.tau.resize(static_cast<std::size_t>(T));
    p.tau[0] = 0.0;
    for (int t = 1; t < T; ++t) p.tau[static_cast<std::size_t>(t)] =
        p.tau[static_cast<std::size_t>(t - 1)] + cfg.visit_gap * rng.uniform(0.5, 1.5);

    int F = cfg.n_factors;
    *factors_out = Tensor::zeros({T, F});
    std::vector<double> f(static_cast<std::size_t>(F));
    for (int j = 0; j < F; ++j) {
        double isd = j < static_cast<int>(cfg.init_sd.size()) ? cfg.init_sd[static_cast<std::size_t>(j)] : 1.0;
        f[static_cast<std::size_t>(j)] = rng.normal() * isd;
        if (bundle >= 0) f[static_cast<std::size_t>(j)] += cfg.bundle_offsets[static_cast<std::size_t>(bundle)][static_cast<std::size_t>(j)];
    }
    for (int t = 0; t < T; ++t) {
        if (t > 0) {
            double dt = p.tau[static_cast<std::size_t>(t)] - p.tau[static_cast<std::size_t>(t - 1)];
            for (int j = 0; j < F; ++j) {
                double drift = j < static_cast<int>(cfg.drift.size()) ? cfg.drift[static_cast<std::size_t>(j)] : 0.0;
                if (j < static_cast<int>(cfg.static_drift.size()) && !p.s.empty())
                    drift += cfg.static_drift[static_cast<std::size_t>(j)] * p.s[0];
                f[static_cast<std::size_t>(j)] = cfg.ar * f[static_cast<std::size_t>(j)] + drift * dt +
                                                 cfg.process_sd * std::sqrt(dt) * rng.normal();
            }
        }
        for (int j = 0; j < F; ++j) factors_out->at(t, j) = f[static_cast<std::size_t>(j)];
    }

    p.x.assign(static_cast<std::size_t>(T) * p.D, 0.0);
    p.ox.assign(static_cast<std::size_t>(T) * p.D, 0);
    p.y.assign(static_cast<std::size_t>(T) * p.P, 0.0);
    p.oy.assign(static_cast<std::size_t>(T) * p.P, 0);

    for (int t = 0; t < T; ++t) {
        const double* ft = factors_out->data.data() + static_cast<std::size_t>(t) * F;
        FeatureMap clean;
        int d_cont = 0, d_cat = schema.num_continuous();
        for (const auto& feat : cfg.features) {
            double score = factor_score(feat, ft);
            if (feat.categorical) {
                int clean_cls = bucket(feat.thresholds, score);
                int noisy_cls = bucket(feat.thresholds, score + feat.noise_sd * rng.normal());
                clean[feat.name] = static_cast<double>(clean_cls);
                p.set_x(t, d_cat, static_cast<double>(noisy_cls));
                ++d_cat;
            } else {
                double v = feat.offset + feat.scale * score;
                clean[feat.name] = v;
                p.set_x(t, d_cont, v + feat.noise_sd * rng.normal());
                ++d_cont;
            }
        }
        std::vector<GroupLabel> labels = label_concepts(clean, cfg.rules);
        for (std::size_t g = 0; g < labels.size(); ++g) {
            if (labels[g].involvement) p.set_y(t, static_cast<int>(2 * g), *labels[g].involvement);
            if (labels[g].stage) p.set_y(t, static_cast<int>(2 * g + 1), *labels[g].stage);
        }
    }
    return p;
}

}  // namespace

SimResult simulate_cohort(const SimConfig& cfg) {
    cfg.validate();
    FeatureSchema schema = schema_from_config(cfg);
    SimResult out;
    out.cohort.schema = schema;
    out.cohort.patients.resize(static_cast<std::size_t>(cfg.n_patients));
    out.factors.resize(static_cast<std::size_t>(cfg.n_patients));
    out.bundle.assign(static_cast<std::size_t>(cfg.n_patients), -1);

    int n_bundles = static_cast<int>(cfg.bundle_offsets.size());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < cfg.n_patients; ++i) {
        int b = n_bundles > 0 ? i % n_bundles : -1;
        out.bundle[static_cast<std::size_t>(i)] = b;
        out.cohort.patients[static_cast<std::size_t>(i)] =
            simulate_patient(cfg, schema, i, b, &out.factors[static_cast<std::size_t>(i)]);
    }

    apply_missingness(out.cohort, cfg.missing_rate_x, cfg.missing_rate_y,
                      Rng::derive(cfg.seed, "missingness"));
    return out;
}

void apply_missingness(Cohort& cohort, double rate_x, double rate_y, std::uint64_t seed) {
    if (rate_x < 0 || rate_x > 1 || rate_y < 0 || rate_y > 1)
        throw ContractError("apply_missingness: rates must be in [0,1]");
    for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
        PatientRecord& p = cohort.patients[i];
        Rng rng(Rng::derive(seed, "mask", static_cast<std::uint64_t>(i)));
        std::vector<std::uint8_t> first_row(p.ox.begin(), p.ox.begin() + p.D);
        for (std::size_t c = 0; c < p.ox.size(); ++c)
            if (p.ox[c] && rng.bernoulli(rate_x)) p.ox[c] = 0;
        for (std::size_t c = 0; c < p.oy.size(); ++c)
            if (p.oy[c] && rng.bernoulli(rate_y)) p.oy[c] = 0;
        // keep at least one measurement at the first visit
        bool any = false;
        for (int d = 0; d < p.D; ++d) any = any || p.ox[static_cast<std::size_t>(d)];
        if (!any)
            for (int d = 0; d < p.D; ++d)
                if (first_row[static_cast<std::size_t>(d)]) {
                    p.ox[static_cast<std::size_t>(d)] = 1;
                    break;
                }
    }
}

namespace {

SimFeature cont(const std::string& name, std::vector<double> loading, double offset, double scale,
                double noise) {
    SimFeature f;
    f.name = name;
    f.loading = std::move(loading);
    f.offset = offset;
    f.scale = scale;
    f.noise_sd = noise;
    return f;
}

SimFeature cat(const std::string& name, std::vector<double> loading, std::vector<double> thresholds,
               double noise) {
    SimFeature f;
    f.name = name;
    f.categorical = true;
    f.loading = std::move(loading);
    f.thresholds = std::move(thresholds);
    f.num_classes = static_cast<int>(f.thresholds.size()) + 1;
    f.noise_sd = noise;
    return f;
}

ConceptRuleSet two_group_rules() {
    using K = Predicate::Kind;
    ConceptRuleSet rs;
    for (const char* g : {"alpha", "beta"}) {
        std::string sev = std::string(1, g[0]) + "sev";
        ConceptGroupRules gr;
        gr.group = g;
        gr.involvement = {{{sev, K::Ge, 0.5}}};
        gr.stages[0] = {{{sev, K::Lt, 0.5}}};
        gr.stages[1] = {{{sev, K::Ge, 0.5}}};
        gr.stages[2] = {{{sev, K::Ge, 1.3}}};
        gr.stages[3] = {{{sev, K::Ge, 2.1}}};
        rs.groups.push_back(std::move(gr));
    }
    return rs;
}

}  // namespace

SimConfig two_group_sim_config() {
    SimConfig cfg;
    cfg.n_patients = 500;
    cfg.T_min = 6;
    cfg.T_max = 12;
    cfg.visit_gap = 0.7;
    cfg.n_factors = 4;  // factors {0,1} drive group alpha, {2,3} group beta
    cfg.ar = 0.9;
    cfg.process_sd = 0.18;
    cfg.drift = {0.05, 0.0, -0.05, 0.0};
    // static drift makes the severity factors predictable from the context
    cfg.static_drift = {0.18, 0.0, 0.12, 0.0};
    cfg.n_static = 2;
    cfg.missing_rate_x = 0.2;
    cfg.missing_rate_y = 0.2;
    cfg.features = {
        cont("asev", {1.0, 0.0, 0.0, 0.0}, 0.0, 1.0, 0.35),
        cont("amix", {0.8, 0.6, 0.0, 0.0}, 0.0, 1.0, 0.35),
        cont("aaux", {0.0, 1.0, 0.0, 0.0}, 0.0, 1.0, 0.35),
        cont("bsev", {0.0, 0.0, 1.0, 0.0}, 0.0, 1.0, 0.35),
        cont("bmix", {0.0, 0.0, 0.8, 0.6}, 0.0, 1.0, 0.35),
        cont("baux", {0.0, 0.0, 0.0, 1.0}, 0.0, 1.0, 0.35),
        cat("acat", {0.0, 1.0, 0.0, 0.0}, {0.0}, 0.3),
        cat("bcat", {0.0, 0.0, 0.0, 1.0}, {0.0}, 0.3),
    };
    cfg.rules = two_group_rules();
    return cfg;
}

SimConfig bundle_sim_config() {
    SimConfig cfg = two_group_sim_config();
    cfg.n_patients = 120;
    cfg.T_min = 6;
    cfg.T_max = 10;
    cfg.process_sd = 0.12;
    cfg.static_drift = {};
    cfg.missing_rate_x = 0.1;
    cfg.missing_rate_y = 0.1;
    cfg.bundle_offsets = {{2.0, 2.0, -2.0, -2.0}, {-2.0, -2.0, 2.0, 2.0}};
    return cfg;
}

SimConfig ssc_analog_sim_config() {
    SimConfig cfg;
    cfg.n_patients = 200;
    cfg.T_min = 5;
    cfg.T_max = 12;
    cfg.visit_gap = 0.8;
    cfg.n_factors = 4;  // 0: lung, 1: dyspnea, 2: cardiac markers, 3: joints
    cfg.ar = 0.9;
    cfg.process_sd = 0.15;
    cfg.drift = {0.1, 0.05, 0.08, 0.0};
    cfg.static_drift = {0.15, 0.1, 0.0, 0.1};
    cfg.n_static = 2;
    cfg.missing_rate_x = 0.3;
    cfg.missing_rate_y = 0.3;
    cfg.features = {
        cont("fvc", {1.0, 0.0, 0.0, 0.0}, 82.0, -11.0, 4.0),
        cont("ild_extent", {1.0, 0.2, 0.0, 0.0}, 14.0, 9.0, 3.0),
        cont("lvef", {0.0, 0.0, 1.0, 0.0}, 55.0, -7.0, 2.5),
        cont("ntprobnp", {0.0, 0.2, 1.0, 0.0}, 95.0, 60.0, 20.0),
        cont("das28", {0.0, 0.0, 0.0, 1.0}, 3.0, 1.1, 0.3),
        cat("ild_on_hrct", {1.0, 0.0, 0.0, 0.0}, {0.8}, 0.3),
        cat("dyspnea", {0.3, 1.0, 0.3, 0.0}, {-0.4, 0.5, 1.3, 2.1}, 0.3),
        cat("joint_synovitis", {0.0, 0.0, 0.0, 1.0}, {0.5}, 0.3),
        cat("tendon_friction", {0.0, 0.0, 0.0, 1.0}, {1.1}, 0.3),
        cat("lung_transplant", {1.0, 0.0, 0.0, 0.0}, {2.8}, 0.1),
    };
    cfg.rules = default_ssc_rules();
    return cfg;
}

std::string SimConfig::to_json() const {
    json j;
    j["type"] = "sim_config";
    j["n_patients"] = n_patients;
    j["T_min"] = T_min;
    j["T_max"] = T_max;
    j["visit_gap"] = visit_gap;
    j["n_factors"] = n_factors;
    j["ar"] = ar;
    j["process_sd"] = process_sd;
    j["drift"] = drift;
    j["static_drift"] = static_drift;
    j["init_sd"] = init_sd;
    j["n_static"] = n_static;
    j["missing_rate_x"] = missing_rate_x;
    j["missing_rate_y"] = missing_rate_y;
    j["bundle_offsets"] = bundle_offsets;
    j["seed"] = seed;
    j["features"] = json::array();
    for (const auto& f : features) {
        json jf;
        jf["name"] = f.name;
        jf["categorical"] = f.categorical;
        jf["num_classes"] = f.num_classes;
        jf["loading"] = f.loading;
        jf["offset"] = f.offset;
        jf["scale"] = f.scale;
        jf["noise_sd"] = f.noise_sd;
        jf["thresholds"] = f.thresholds;
        j["features"].push_back(std::move(jf));
    }
    j["rules"] = json::parse(rules.to_json());
    return j.dump(2);
}

SimConfig SimConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    SimConfig cfg;
    if (j.contains("preset")) {
        std::string preset = j["preset"].get<std::string>();
        if (preset == "two_group")
            cfg = two_group_sim_config();
        else if (preset == "bundles")
            cfg = bundle_sim_config();
        else if (preset == "ssc_analog")
            cfg = ssc_analog_sim_config();
        else
            throw ContractError("sim config: unknown preset '" + preset + "'");
    }
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("n_patients", cfg.n_patients);
    get("T_min", cfg.T_min);
    get("T_max", cfg.T_max);
    get("visit_gap", cfg.visit_gap);
    get("n_factors", cfg.n_factors);
    get("ar", cfg.ar);
    get("process_sd", cfg.process_sd);
    get("drift", cfg.drift);
    get("static_drift", cfg.static_drift);
    get("init_sd", cfg.init_sd);
    get("n_static", cfg.n_static);
    get("missing_rate_x", cfg.missing_rate_x);
    get("missing_rate_y", cfg.missing_rate_y);
    get("bundle_offsets", cfg.bundle_offsets);
    get("seed", cfg.seed);
    if (j.contains("features")) {
        cfg.features.clear();
        for (const auto& jf : j["features"]) {
            SimFeature f;
            f.name = jf.at("name").get<std::string>();
            f.categorical = jf.value("categorical", false);
            f.num_classes = jf.value("num_classes", 2);
            f.loading = jf.at("loading").get<std::vector<double>>();
            f.offset = jf.value("offset", 0.0);
            f.scale = jf.value("scale", 1.0);
            f.noise_sd = jf.value("noise_sd", 0.1);
            f.thresholds = jf.value("thresholds", std::vector<double>{});
            cfg.features.push_back(std::move(f));
        }
    }
    if (j.contains("rules")) cfg.rules = ConceptRuleSet::from_json(j["rules"].dump());
    cfg.validate();
    return cfg;
}

}  // namespace trajvae
