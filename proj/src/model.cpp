#include "trajvae/model.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

namespace trajvae {

using nlohmann::json;

void GuidancePartition::validate(int latent_dim, int num_concepts) const {
    std::set<int> seen_latent;
    std::set<int> seen_concepts;
    for (const auto& g : groups) {
        if (g.concepts.empty()) throw ContractError("partition: group '" + g.id + "' guides no concepts");
        for (int l : g.latent) {
            if (l < 0 || l >= latent_dim) throw ContractError("partition: latent index out of range");
            if (!seen_latent.insert(l).second)
                throw ContractError("partition: latent index " + std::to_string(l) + " used by two groups");
        }
        for (int c : g.concepts) {
            if (c < 0 || c >= num_concepts) throw ContractError("partition: concept index out of range");
            if (!seen_concepts.insert(c).second)
                throw ContractError("partition: concept " + std::to_string(c) + " guided twice");
        }
    }
    if (static_cast<int>(seen_concepts.size()) != num_concepts)
        throw ContractError("partition: not all concepts are guided");
}

GuidancePartition GuidancePartition::even_blocks(const FeatureSchema& schema, int latent_dim) {
    // preserve first-appearance order of the schema's concept groups
    std::vector<std::string> names;
    for (const auto& c : schema.concepts)
        if (std::find(names.begin(), names.end(), c.group) == names.end()) names.push_back(c.group);
    if (names.empty()) throw ContractError("partition: schema has no concepts");
    int n = static_cast<int>(names.size());
    int block = latent_dim / n;
    if (block < 1) throw ContractError("partition: latent dim smaller than group count");
    GuidancePartition part;
    for (int g = 0; g < n; ++g) {
        GuidanceGroup grp;
        grp.id = names[static_cast<std::size_t>(g)];
        int hi = (g == n - 1) ? latent_dim : (g + 1) * block;
        for (int l = g * block; l < hi; ++l) grp.latent.push_back(l);
        for (int c = 0; c < schema.P(); ++c)
            if (schema.concepts[static_cast<std::size_t>(c)].group == grp.id) grp.concepts.push_back(c);
        part.groups.push_back(std::move(grp));
    }
    return part;
}

void ModelConfig::validate(const FeatureSchema& schema) const {
    if (latent_dim < 1 || lstm_hidden < 1 || dense_hidden < 1 || guidance_hidden < 1 || prior_hidden < 1)
        throw ContractError("model config: widths must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ContractError("model config: dropout out of range");
    partition.validate(latent_dim, schema.P());
}

std::string ModelConfig::to_json() const {
    json j;
    j["latent_dim"] = latent_dim;
    j["lstm_hidden"] = lstm_hidden;
    j["dense_hidden"] = dense_hidden;
    j["guidance_hidden"] = guidance_hidden;
    j["prior_hidden"] = prior_hidden;
    j["dropout"] = dropout;
    j["probabilistic"] = probabilistic;
    j["learn_sigma"] = learn_sigma;
    j["guidance_uses_context"] = guidance_uses_context;
    j["partition"] = json::array();
    for (const auto& g : partition.groups)
        j["partition"].push_back({{"id", g.id}, {"latent", g.latent}, {"concepts", g.concepts}});
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text, const FeatureSchema& schema) {
    json j = json::parse(text);
    ModelConfig cfg;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("latent_dim", cfg.latent_dim);
    get("lstm_hidden", cfg.lstm_hidden);
    get("dense_hidden", cfg.dense_hidden);
    get("guidance_hidden", cfg.guidance_hidden);
    get("prior_hidden", cfg.prior_hidden);
    get("dropout", cfg.dropout);
    get("probabilistic", cfg.probabilistic);
    get("learn_sigma", cfg.learn_sigma);
    get("guidance_uses_context", cfg.guidance_uses_context);
    if (j.contains("partition")) {
        for (const auto& jg : j["partition"]) {
            GuidanceGroup g;
            g.id = jg.at("id").get<std::string>();
            g.latent = jg.at("latent").get<std::vector<int>>();
            if (jg.contains("concepts") && !jg["concepts"].empty() && jg["concepts"][0].is_string()) {
                for (const auto& name : jg["concepts"]) {
                    int idx = schema.concept_index(name.get<std::string>());
                    if (idx < 0) throw ContractError("model config: unknown concept '" + name.get<std::string>() + "'");
                    g.concepts.push_back(idx);
                }
            } else {
                g.concepts = jg.at("concepts").get<std::vector<int>>();
            }
            cfg.partition.groups.push_back(std::move(g));
        }
    } else {
        cfg.partition = GuidancePartition::even_blocks(schema, cfg.latent_dim);
    }
    cfg.validate(schema);
    return cfg;
}

ModelParameters ModelParameters::create(const ModelConfig& cfg, const FeatureSchema& schema) {
    ModelParameters p;
    int enc_in = cfg.encoder_input_dim(schema);
    int H = cfg.lstm_hidden;
    int L = cfg.latent_dim;
    int C = schema.num_continuous();
    p.lstm = Dense(4 * H, enc_in + H);
    p.enc_h1 = Dense(cfg.dense_hidden, cfg.head_input_dim(schema));
    p.enc_h2 = Dense(cfg.dense_hidden, cfg.dense_hidden);
    p.enc_mu = Dense(L, cfg.dense_hidden);
    p.enc_sd = Dense(L, cfg.dense_hidden);
    p.prior_h = Dense(cfg.prior_hidden, cfg.context_dim(schema));
    p.prior_mu = Dense(L, cfg.prior_hidden);
    p.prior_sd = Dense(L, cfg.prior_hidden);
    p.dec_h_mu = Dense(cfg.dense_hidden, cfg.decoder_input_dim(schema));
    p.dec_mu = Dense(std::max(C, 1), cfg.dense_hidden);
    p.dec_cat = Dense(std::max(schema.onehot_width(), 1), cfg.dense_hidden);
    p.dec_h_sd = Dense(cfg.dense_hidden, cfg.decoder_input_dim(schema));
    p.dec_sd = Dense(std::max(C, 1), cfg.dense_hidden);
    for (const auto& g : cfg.partition.groups) {
        GuidanceGroupParams gp;
        int in = static_cast<int>(g.latent.size()) + (cfg.guidance_uses_context ? cfg.context_dim(schema) : 0);
        gp.hidden = Dense(cfg.guidance_hidden, in);
        for (int c : g.concepts)
            gp.heads.emplace_back(schema.concepts[static_cast<std::size_t>(c)].num_classes, cfg.guidance_hidden);
        p.guidance.push_back(std::move(gp));
    }
    return p;
}

ModelParameters ModelParameters::init_random(const ModelConfig& cfg, const FeatureSchema& schema,
                                             std::uint64_t seed) {
    ModelParameters p = create(cfg, schema);
    Rng rng(Rng::derive(seed, "init"));
    p.visit([&](const std::string&, Dense& d) { d.init_uniform(rng); });
    // start the forget gate open so early training does not wash out state
    int H = cfg.lstm_hidden;
    for (int i = H; i < 2 * H; ++i) p.lstm.b[i] = 1.0;
    return p;
}

std::vector<Tensor*> ModelParameters::tensors() {
    std::vector<Tensor*> out;
    visit([&](const std::string&, Dense& d) {
        out.push_back(&d.W);
        out.push_back(&d.b);
    });
    return out;
}

std::vector<const Tensor*> ModelParameters::tensors() const {
    std::vector<const Tensor*> out;
    visit([&](const std::string&, const Dense& d) {
        out.push_back(&d.W);
        out.push_back(&d.b);
    });
    return out;
}

void ModelParameters::zero() {
    visit([](const std::string&, Dense& d) {
        d.W.fill(0.0);
        d.b.fill(0.0);
    });
}

void ModelParameters::add_scaled(const ModelParameters& other, double factor) {
    auto mine = tensors();
    auto theirs = other.tensors();
    if (mine.size() != theirs.size()) throw DimensionError("add_scaled: layout mismatch");
    for (std::size_t i = 0; i < mine.size(); ++i)
        for (int j = 0; j < mine[i]->size(); ++j) (*mine[i])[j] += factor * (*theirs[i])[j];
}

bool ModelParameters::all_finite() const {
    for (const Tensor* t : tensors())
        if (!t->all_finite()) return false;
    return true;
}

ParamRefs ParamRefs::build(Tape& tape, const ModelParameters& p) {
    ParamRefs r;
    r.lstm = make_ref(tape, p.lstm);
    r.enc_h1 = make_ref(tape, p.enc_h1);
    r.enc_h2 = make_ref(tape, p.enc_h2);
    r.enc_mu = make_ref(tape, p.enc_mu);
    r.enc_sd = make_ref(tape, p.enc_sd);
    r.prior_h = make_ref(tape, p.prior_h);
    r.prior_mu = make_ref(tape, p.prior_mu);
    r.prior_sd = make_ref(tape, p.prior_sd);
    r.dec_h_mu = make_ref(tape, p.dec_h_mu);
    r.dec_mu = make_ref(tape, p.dec_mu);
    r.dec_cat = make_ref(tape, p.dec_cat);
    r.dec_h_sd = make_ref(tape, p.dec_h_sd);
    r.dec_sd = make_ref(tape, p.dec_sd);
    for (const auto& g : p.guidance) {
        GuidanceGroupRefs gr;
        gr.hidden = make_ref(tape, g.hidden);
        for (const auto& h : g.heads) gr.heads.push_back(make_ref(tape, h));
        r.guidance.push_back(std::move(gr));
    }
    return r;
}

void ParamRefs::accumulate_grads(const Tape& tape, ModelParameters& grads) const {
    auto acc = [&](const DenseRef& ref, Dense& g) {
        const Tensor& gw = tape.adjoint(ref.W);
        const Tensor& gb = tape.adjoint(ref.b);
        for (int i = 0; i < g.W.size(); ++i) g.W[i] += gw[i];
        for (int i = 0; i < g.b.size(); ++i) g.b[i] += gb[i];
    };
    acc(lstm, grads.lstm);
    acc(enc_h1, grads.enc_h1);
    acc(enc_h2, grads.enc_h2);
    acc(enc_mu, grads.enc_mu);
    acc(enc_sd, grads.enc_sd);
    acc(prior_h, grads.prior_h);
    acc(prior_mu, grads.prior_mu);
    acc(prior_sd, grads.prior_sd);
    acc(dec_h_mu, grads.dec_h_mu);
    acc(dec_mu, grads.dec_mu);
    acc(dec_cat, grads.dec_cat);
    acc(dec_h_sd, grads.dec_h_sd);
    acc(dec_sd, grads.dec_sd);
    for (std::size_t g = 0; g < guidance.size(); ++g) {
        acc(guidance[g].hidden, grads.guidance[g].hidden);
        for (std::size_t j = 0; j < guidance[g].heads.size(); ++j)
            acc(guidance[g].heads[j], grads.guidance[g].heads[j]);
    }
}

namespace {

Tape::Var sd_head(Tape& tape, const DenseRef& layer, Tape::Var hidden) {
    return tape.add_const(tape.softplus(dense(tape, layer, hidden)), kSdFloor);
}

Tape::Var context_vec(Tape& tape, double tau_t, const std::vector<double>& statics) {
    std::vector<double> c;
    c.push_back(tau_t);
    c.insert(c.end(), statics.begin(), statics.end());
    return tape.constant(Tensor::vec(std::move(c)));
}

// gathers arbitrary latent columns as a concat of unit slices (merging runs)
Tape::Var gather(Tape& tape, Tape::Var z, const std::vector<int>& indices) {
    std::vector<Tape::Var> parts;
    std::size_t i = 0;
    while (i < indices.size()) {
        std::size_t j = i;
        while (j + 1 < indices.size() && indices[j + 1] == indices[j] + 1) ++j;
        parts.push_back(tape.slice(z, indices[i], static_cast<int>(j - i + 1)));
        i = j + 1;
    }
    return parts.size() == 1 ? parts[0] : tape.concat(parts);
}

}  // namespace

SequenceDist prior_params(Tape& tape, const ParamRefs& refs, const ModelConfig& cfg,
                          const FeatureSchema& schema, const PatientRecord& patient,
                          Rng* dropout_rng) {
    (void)schema;
    SequenceDist out;
    for (int t = 0; t < patient.T(); ++t) {
        Tape::Var c = context_vec(tape, patient.tau[static_cast<std::size_t>(t)], patient.s);
        Tape::Var h = tape.relu(dense(tape, refs.prior_h, c));
        h = dropout(tape, h, cfg.dropout, dropout_rng);
        out.mu.push_back(dense(tape, refs.prior_mu, h));
        out.sd.push_back(sd_head(tape, refs.prior_sd, h));
    }
    return out;
}

SequenceDist encode(Tape& tape, const ParamRefs& refs, const ModelConfig& cfg,
                    const FeatureSchema& schema, const PatientRecord& patient, int k,
                    Rng* dropout_rng) {
    int T = patient.T();
    if (k < 0 || k > T) throw ContractError("encode: k out of [0, T]");
    int C = schema.num_continuous();
    int H = cfg.lstm_hidden;

    Tape::Var h = tape.constant(Tensor::zeros({H}));
    Tape::Var c = tape.constant(Tensor::zeros({H}));
    for (int t = 0; t < k; ++t) {
        std::vector<double> row;
        row.reserve(static_cast<std::size_t>(cfg.encoder_input_dim(schema)));
        for (int d = 0; d < C; ++d) row.push_back(patient.x_observed(t, d) ? patient.xat(t, d) : 0.0);
        for (int d = C; d < schema.D(); ++d) {
            int K = schema.cat_classes(d);
            int cls = patient.x_observed(t, d) ? static_cast<int>(patient.xat(t, d)) : -1;
            for (int j = 0; j < K; ++j) row.push_back(j == cls ? 1.0 : 0.0);
        }
        for (int d = 0; d < schema.D(); ++d) row.push_back(patient.x_observed(t, d) ? 1.0 : 0.0);
        double tau_t = patient.tau[static_cast<std::size_t>(t)];
        row.push_back(t > 0 ? tau_t - patient.tau[static_cast<std::size_t>(t - 1)] : 0.0);
        row.push_back(tau_t);
        row.insert(row.end(), patient.s.begin(), patient.s.end());
        Tape::Var x_t = tape.constant(Tensor::vec(std::move(row)));
        std::tie(h, c) = lstm_step(tape, refs.lstm, x_t, h, c);
    }

    double tau_k = k > 0 ? patient.tau[static_cast<std::size_t>(k - 1)] : 0.0;
    SequenceDist out;
    for (int t = 0; t < T; ++t) {
        double tau_t = patient.tau[static_cast<std::size_t>(t)];
        std::vector<double> extra = {tau_t - tau_k, tau_t};
        extra.insert(extra.end(), patient.s.begin(), patient.s.end());
        Tape::Var in = tape.concat({h, tape.constant(Tensor::vec(std::move(extra)))});
        Tape::Var h1 = dropout(tape, tape.relu(dense(tape, refs.enc_h1, in)), cfg.dropout, dropout_rng);
        Tape::Var h2 = dropout(tape, tape.relu(dense(tape, refs.enc_h2, h1)), cfg.dropout, dropout_rng);
        out.mu.push_back(dense(tape, refs.enc_mu, h2));
        if (cfg.probabilistic) out.sd.push_back(sd_head(tape, refs.enc_sd, h2));
    }
    return out;
}

std::vector<Tape::Var> reparameterize(Tape& tape, const SequenceDist& dist,
                                      const std::vector<Tensor>& noise) {
    std::vector<Tape::Var> z;
    z.reserve(dist.mu.size());
    for (std::size_t t = 0; t < dist.mu.size(); ++t) {
        if (dist.sd.empty()) {
            z.push_back(dist.mu[t]);  // deterministic mode
            continue;
        }
        if (noise.size() != dist.mu.size()) throw DimensionError("reparameterize: noise count mismatch");
        Tape::Var eps = tape.constant(noise[t]);
        z.push_back(tape.add(dist.mu[t], tape.mul(dist.sd[t], eps)));
    }
    return z;
}

DecodeVars decode_step(Tape& tape, const ParamRefs& refs, const ModelConfig& cfg,
                       const FeatureSchema& schema, Tape::Var z_t, double tau_t,
                       const std::vector<double>& statics, Rng* dropout_rng) {
    Tape::Var in = tape.concat({z_t, context_vec(tape, tau_t, statics)});
    Tape::Var hmu = dropout(tape, tape.relu(dense(tape, refs.dec_h_mu, in)), cfg.dropout, dropout_rng);
    DecodeVars out;
    int C = schema.num_continuous();
    if (C > 0) {
        out.cont_mu = dense(tape, refs.dec_mu, hmu);
        if (cfg.learn_sigma) {
            Tape::Var hsd = dropout(tape, tape.relu(dense(tape, refs.dec_h_sd, in)), cfg.dropout, dropout_rng);
            out.cont_sd = sd_head(tape, refs.dec_sd, hsd);
        } else {
            out.cont_sd = tape.constant(Tensor::full({C}, 1.0));
        }
    }
    if (schema.num_categorical() > 0) {
        Tape::Var logits = dense(tape, refs.dec_cat, hmu);
        int at = 0;
        for (int d = C; d < schema.D(); ++d) {
            int K = schema.cat_classes(d);
            out.cat_probs.push_back(tape.softmax(tape.slice(logits, at, K)));
            at += K;
        }
    }
    return out;
}

std::vector<Tape::Var> guide_step(Tape& tape, const ParamRefs& refs, const ModelConfig& cfg,
                                  const FeatureSchema& schema, Tape::Var z_t, double tau_t,
                                  const std::vector<double>& statics, Rng* dropout_rng) {
    std::vector<Tape::Var> out(static_cast<std::size_t>(schema.P()), -1);
    for (std::size_t g = 0; g < cfg.partition.groups.size(); ++g) {
        const GuidanceGroup& grp = cfg.partition.groups[g];
        Tape::Var in = gather(tape, z_t, grp.latent);
        if (cfg.guidance_uses_context) in = tape.concat({in, context_vec(tape, tau_t, statics)});
        Tape::Var h = dropout(tape, tape.relu(dense(tape, refs.guidance[g].hidden, in)), cfg.dropout,
                              dropout_rng);
        for (std::size_t j = 0; j < grp.concepts.size(); ++j)
            out[static_cast<std::size_t>(grp.concepts[j])] =
                tape.softmax(dense(tape, refs.guidance[g].heads[j], h));
    }
    return out;
}

}  // namespace trajvae
