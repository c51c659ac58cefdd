#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajvae/cohort.hpp"
#include "trajvae/layers.hpp"
#include "trajvae/tape.hpp"

namespace trajvae {

// Assigns each concept group a subset of latent dimensions (disjoint across
// groups) and the concept columns it predicts.
struct GuidanceGroup {
    std::string id;
    std::vector<int> latent;    // indices into 0..L-1
    std::vector<int> concepts;  // indices into 0..P-1
};

struct GuidancePartition {
    std::vector<GuidanceGroup> groups;

    void validate(int latent_dim, int num_concepts) const;

    // contiguous latent blocks of equal size, one per schema concept group,
    // covering all concepts
    static GuidancePartition even_blocks(const FeatureSchema& schema, int latent_dim);
};

struct ModelConfig {
    int latent_dim = 21;
    int lstm_hidden = 100;
    int dense_hidden = 100;
    int guidance_hidden = 40;
    int prior_hidden = 50;
    double dropout = 0.1;
    bool probabilistic = true;        // false: deterministic encoder, no KL
    bool learn_sigma = true;          // false: likelihood sd fixed at 1
    bool guidance_uses_context = false;
    GuidancePartition partition;

    void validate(const FeatureSchema& schema) const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text, const FeatureSchema& schema);

    // encoder input width per visit: standardized continuous block, one-hot
    // categorical block, D mask channels, delta-tau, tau, statics
    int encoder_input_dim(const FeatureSchema& s) const {
        return s.num_continuous() + s.onehot_width() + s.D() + 2 + s.S();
    }
    int head_input_dim(const FeatureSchema& s) const { return lstm_hidden + 2 + s.S(); }
    int context_dim(const FeatureSchema& s) const { return 1 + s.S(); }
    int decoder_input_dim(const FeatureSchema& s) const { return latent_dim + context_dim(s); }
};

struct GuidanceGroupParams {
    Dense hidden;
    std::vector<Dense> heads;  // one per concept in the group
};

// All learnable weights: posterior (lstm + enc_*), prior (prior_*),
// likelihood (dec_*), guidance heads.
struct ModelParameters {
    Dense lstm;     // fused gate weights, [4H x (enc_in + H)]
    Dense enc_h1, enc_h2;
    Dense enc_mu, enc_sd;
    Dense prior_h, prior_mu, prior_sd;
    Dense dec_h_mu, dec_mu, dec_cat;
    Dense dec_h_sd, dec_sd;
    std::vector<GuidanceGroupParams> guidance;

    static ModelParameters create(const ModelConfig& cfg, const FeatureSchema& schema);
    static ModelParameters init_random(const ModelConfig& cfg, const FeatureSchema& schema,
                                       std::uint64_t seed);

    template <typename Self, typename F>
    static void visit_impl(Self& self, F&& fn) {
        fn("lstm", self.lstm);
        fn("enc_h1", self.enc_h1);
        fn("enc_h2", self.enc_h2);
        fn("enc_mu", self.enc_mu);
        fn("enc_sd", self.enc_sd);
        fn("prior_h", self.prior_h);
        fn("prior_mu", self.prior_mu);
        fn("prior_sd", self.prior_sd);
        fn("dec_h_mu", self.dec_h_mu);
        fn("dec_mu", self.dec_mu);
        fn("dec_cat", self.dec_cat);
        fn("dec_h_sd", self.dec_h_sd);
        fn("dec_sd", self.dec_sd);
        for (std::size_t g = 0; g < self.guidance.size(); ++g) {
            std::string base = "guid" + std::to_string(g);
            fn(base + "_hidden", self.guidance[g].hidden);
            for (std::size_t j = 0; j < self.guidance[g].heads.size(); ++j)
                fn(base + "_head" + std::to_string(j), self.guidance[g].heads[j]);
        }
    }
    template <typename F>
    void visit(F&& fn) {
        visit_impl(*this, std::forward<F>(fn));
    }
    template <typename F>
    void visit(F&& fn) const {
        visit_impl(*this, std::forward<F>(fn));
    }

    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
    void zero();
    void add_scaled(const ModelParameters& other, double factor);
    bool all_finite() const;
};

struct GuidanceGroupRefs {
    DenseRef hidden;
    std::vector<DenseRef> heads;
};

// Parameter leaves registered on one tape.
struct ParamRefs {
    DenseRef lstm, enc_h1, enc_h2, enc_mu, enc_sd;
    DenseRef prior_h, prior_mu, prior_sd;
    DenseRef dec_h_mu, dec_mu, dec_cat, dec_h_sd, dec_sd;
    std::vector<GuidanceGroupRefs> guidance;

    static ParamRefs build(Tape& tape, const ModelParameters& params);
    // adds the tape's adjoints into `grads` (same layout as the parameters)
    void accumulate_grads(const Tape& tape, ModelParameters& grads) const;
};

// Per-visit diagonal Gaussian parameters over the latent process; one [L]
// tensor pair per target visit.
struct SequenceDist {
    std::vector<Tape::Var> mu;
    std::vector<Tape::Var> sd;  // empty in deterministic mode
};

struct DecodeVars {
    Tape::Var cont_mu = -1;
    Tape::Var cont_sd = -1;
    std::vector<Tape::Var> cat_probs;  // per categorical feature, simplex
};

constexpr double kSdFloor = 1e-3;

// p_phi(z_t | c_t): depends only on (tau_t, s).
SequenceDist prior_params(Tape& tape, const ParamRefs& refs, const ModelConfig& cfg,
                          const FeatureSchema& schema, const PatientRecord& patient,
                          Rng* dropout_rng = nullptr);

// q_theta(z_{1:T} | x_{0:k}, c): recurrent pass over the first k visits, then
// horizon-aware heads emit parameters for every target visit.
SequenceDist encode(Tape& tape, const ParamRefs& refs, const ModelConfig& cfg,
                    const FeatureSchema& schema, const PatientRecord& patient, int k,
                    Rng* dropout_rng = nullptr);

// z = mu + sd * noise (mean when deterministic)
std::vector<Tape::Var> reparameterize(Tape& tape, const SequenceDist& dist,
                                      const std::vector<Tensor>& noise);

DecodeVars decode_step(Tape& tape, const ParamRefs& refs, const ModelConfig& cfg,
                       const FeatureSchema& schema, Tape::Var z_t, double tau_t,
                       const std::vector<double>& statics, Rng* dropout_rng = nullptr);

// per-concept class probability vectors; concept j in group g reads only the
// latent columns of group g
std::vector<Tape::Var> guide_step(Tape& tape, const ParamRefs& refs, const ModelConfig& cfg,
                                  const FeatureSchema& schema, Tape::Var z_t, double tau_t,
                                  const std::vector<double>& statics, Rng* dropout_rng = nullptr);

}  // namespace trajvae
