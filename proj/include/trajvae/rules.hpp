#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace trajvae {

// Threshold / equality predicates over named features, used to derive the
// medical-concept labels from raw measurements.
struct Predicate {
    enum class Kind { Lt, Le, Gt, Ge, Eq };
    std::string feature;
    Kind kind = Kind::Lt;
    double value = 0.0;
};

// A rule is a conjunction of predicates; rule lists are OR-combined.
using Rule = std::vector<Predicate>;

struct ConceptGroupRules {
    std::string group;  // e.g. "lung"
    std::vector<Rule> involvement;
    std::array<std::vector<Rule>, 4> stages;  // ordered by increasing severity
};

struct ConceptRuleSet {
    std::vector<ConceptGroupRules> groups;

    std::string to_json() const;
    static ConceptRuleSet from_json(const std::string& text);
};

// Three-valued label for one group. Missing inputs propagate to missing
// labels; for stages, the most severe satisfied rule wins.
struct GroupLabel {
    std::optional<int> involvement;  // 0 / 1
    std::optional<int> stage;        // 0..3 for stages 1..4
};

using FeatureMap = std::map<std::string, double>;

// Pure function: evaluates the rules of one group on a feature map.
GroupLabel label_group(const FeatureMap& features, const ConceptGroupRules& rules);

std::vector<GroupLabel> label_concepts(const FeatureMap& features, const ConceptRuleSet& rules);

// Thresholds transcribed from preliminary SSc organ definitions (lung, heart,
// joints). Only the predicates expressible over the simulated features are
// included; see docs/rules.md for the omitted clinical predicates.
ConceptRuleSet default_ssc_rules();

}  // namespace trajvae
