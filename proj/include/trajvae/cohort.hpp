#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "trajvae/tensor.hpp"

namespace trajvae {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ContinuousFeature {
    std::string name;
    std::string unit;
};
struct CategoricalFeature {
    std::string name;
    int num_classes = 2;
};
struct ConceptDef {
    std::string name;
    int num_classes = 2;
    std::string group;
};
struct StaticField {
    std::string name;
    std::string kind;  // free-form: "real", "binary", ...
};

struct FeatureSchema {
    std::vector<ContinuousFeature> continuous;
    std::vector<CategoricalFeature> categorical;
    std::vector<ConceptDef> concepts;
    std::vector<StaticField> statics;

    int num_continuous() const { return static_cast<int>(continuous.size()); }
    int num_categorical() const { return static_cast<int>(categorical.size()); }
    int D() const { return num_continuous() + num_categorical(); }
    int P() const { return static_cast<int>(concepts.size()); }
    int S() const { return static_cast<int>(statics.size()); }
    // total one-hot width of the categorical block
    int onehot_width() const {
        int k = 0;
        for (const auto& c : categorical) k += c.num_classes;
        return k;
    }
    // feature d: continuous features first, then categorical
    bool is_categorical(int d) const { return d >= num_continuous(); }
    int cat_classes(int d) const { return categorical[static_cast<std::size_t>(d - num_continuous())].num_classes; }
    const std::string& feature_name(int d) const {
        return is_categorical(d) ? categorical[static_cast<std::size_t>(d - num_continuous())].name
                                 : continuous[static_cast<std::size_t>(d)].name;
    }
    int feature_index(const std::string& name) const;  // -1 if absent
    int concept_index(const std::string& name) const;

    void validate() const;
    std::string to_json_line() const;
    static FeatureSchema from_json_line(const std::string& line);
};

// One patient's irregularly sampled history. x is T x D and y is T x P,
// row-major, with parallel observation masks (1 = observed). Masked cells hold
// NaN when loaded from disk and are never read by any loss or metric.
struct PatientRecord {
    std::string id;
    std::vector<double> s;
    std::vector<double> tau;  // years since first visit, strictly increasing
    std::vector<double> x;
    std::vector<std::uint8_t> ox;
    std::vector<double> y;
    std::vector<std::uint8_t> oy;
    std::vector<double> meds;  // optional T x M block, unused by the model
    int D = 0, P = 0, M = 0;

    int T() const { return static_cast<int>(tau.size()); }
    double& xat(int t, int d) { return x[static_cast<std::size_t>(t) * D + d]; }
    double xat(int t, int d) const { return x[static_cast<std::size_t>(t) * D + d]; }
    bool x_observed(int t, int d) const { return ox[static_cast<std::size_t>(t) * D + d] != 0; }
    double& yat(int t, int p) { return y[static_cast<std::size_t>(t) * P + p]; }
    double yat(int t, int p) const { return y[static_cast<std::size_t>(t) * P + p]; }
    bool y_observed(int t, int p) const { return oy[static_cast<std::size_t>(t) * P + p] != 0; }
    void set_x(int t, int d, double v) {
        xat(t, d) = v;
        ox[static_cast<std::size_t>(t) * D + d] = 1;
    }
    void set_y(int t, int p, int cls) {
        yat(t, p) = static_cast<double>(cls);
        oy[static_cast<std::size_t>(t) * P + p] = 1;
    }
};

struct Cohort {
    FeatureSchema schema;
    std::vector<PatientRecord> patients;

    int size() const { return static_cast<int>(patients.size()); }
};

// Per-continuous-feature standardization statistics (observed training cells
// only; population std with a 1.0 fallback for constant / empty features).
struct ScalerStats {
    std::vector<double> mean;
    std::vector<double> sd;

    std::string to_json() const;
    static ScalerStats from_json(const std::string& s);
};

Cohort parse_cohort(const std::string& path);
Cohort parse_cohort_stream(std::istream& in, const std::string& origin);
void write_cohort(const Cohort& cohort, const std::string& path, const std::string& meta = "");

Cohort filter_min_visits(const Cohort& cohort, int min_T);

// Standardizes observed continuous cells in place. Computes stats from the
// cohort when none are given.
ScalerStats standardize(Cohort& cohort, const std::optional<ScalerStats>& stats = std::nullopt);
void unstandardize(Cohort& cohort, const ScalerStats& stats);

struct SplitResult {
    Cohort train, val, test;
};
SplitResult split(const Cohort& cohort, double f_train, double f_val, double f_test,
                  std::uint64_t seed);

}  // namespace trajvae
