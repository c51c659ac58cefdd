#include "trajvae/rules.hpp"

#include <json.hpp>

#include "trajvae/tensor.hpp"

namespace trajvae {

using nlohmann::json;

namespace {

enum class Tri { False, True, Unknown };

Tri eval_predicate(const FeatureMap& features, const Predicate& p) {
    auto it = features.find(p.feature);
    if (it == features.end()) return Tri::Unknown;
    double v = it->second;
    bool r = false;
    switch (p.kind) {
        case Predicate::Kind::Lt: r = v < p.value; break;
        case Predicate::Kind::Le: r = v <= p.value; break;
        case Predicate::Kind::Gt: r = v > p.value; break;
        case Predicate::Kind::Ge: r = v >= p.value; break;
        case Predicate::Kind::Eq: r = v == p.value; break;
    }
    return r ? Tri::True : Tri::False;
}

Tri eval_rule(const FeatureMap& features, const Rule& rule) {
    bool unknown = false;
    for (const Predicate& p : rule) {
        Tri t = eval_predicate(features, p);
        if (t == Tri::False) return Tri::False;
        if (t == Tri::Unknown) unknown = true;
    }
    return unknown ? Tri::Unknown : Tri::True;
}

// OR over rules: any true -> true; all false -> false; else unknown.
Tri eval_any(const FeatureMap& features, const std::vector<Rule>& rules) {
    bool unknown = false;
    for (const Rule& r : rules) {
        Tri t = eval_rule(features, r);
        if (t == Tri::True) return Tri::True;
        if (t == Tri::Unknown) unknown = true;
    }
    return unknown ? Tri::Unknown : Tri::False;
}

std::string kind_name(Predicate::Kind k) {
    switch (k) {
        case Predicate::Kind::Lt: return "lt";
        case Predicate::Kind::Le: return "le";
        case Predicate::Kind::Gt: return "gt";
        case Predicate::Kind::Ge: return "ge";
        case Predicate::Kind::Eq: return "eq";
    }
    return "lt";
}

Predicate::Kind kind_from(const std::string& s) {
    if (s == "lt") return Predicate::Kind::Lt;
    if (s == "le") return Predicate::Kind::Le;
    if (s == "gt") return Predicate::Kind::Gt;
    if (s == "ge") return Predicate::Kind::Ge;
    if (s == "eq") return Predicate::Kind::Eq;
    throw ContractError("rules: unknown predicate kind '" + s + "'");
}

json rules_to_json(const std::vector<Rule>& rules) {
    json out = json::array();
    for (const Rule& r : rules) {
        json jr = json::array();
        for (const Predicate& p : r)
            jr.push_back({{"feature", p.feature}, {"op", kind_name(p.kind)}, {"value", p.value}});
        out.push_back(std::move(jr));
    }
    return out;
}

std::vector<Rule> rules_from_json(const json& j) {
    std::vector<Rule> out;
    for (const auto& jr : j) {
        Rule r;
        for (const auto& jp : jr)
            r.push_back({jp.at("feature").get<std::string>(), kind_from(jp.at("op").get<std::string>()),
                         jp.at("value").get<double>()});
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

GroupLabel label_group(const FeatureMap& features, const ConceptGroupRules& rules) {
    GroupLabel out;
    Tri inv = eval_any(features, rules.involvement);
    if (inv != Tri::Unknown) out.involvement = (inv == Tri::True) ? 1 : 0;

    // most severe satisfied stage wins
    for (int s = 3; s >= 0; --s) {
        if (eval_any(features, rules.stages[static_cast<std::size_t>(s)]) == Tri::True) {
            out.stage = s;
            break;
        }
    }
    return out;
}

std::vector<GroupLabel> label_concepts(const FeatureMap& features, const ConceptRuleSet& rules) {
    std::vector<GroupLabel> out;
    out.reserve(rules.groups.size());
    for (const auto& g : rules.groups) out.push_back(label_group(features, g));
    return out;
}

std::string ConceptRuleSet::to_json() const {
    json j;
    j["type"] = "rules";
    j["groups"] = json::array();
    for (const auto& g : groups) {
        json jg;
        jg["group"] = g.group;
        jg["involvement"] = rules_to_json(g.involvement);
        jg["stages"] = json::array();
        for (const auto& st : g.stages) jg["stages"].push_back(rules_to_json(st));
        j["groups"].push_back(std::move(jg));
    }
    return j.dump(2);
}

ConceptRuleSet ConceptRuleSet::from_json(const std::string& text) {
    json j = json::parse(text);
    ConceptRuleSet out;
    for (const auto& jg : j.at("groups")) {
        ConceptGroupRules g;
        g.group = jg.at("group").get<std::string>();
        g.involvement = rules_from_json(jg.at("involvement"));
        const json& st = jg.at("stages");
        if (st.size() != 4) throw ContractError("rules: group '" + g.group + "' needs exactly 4 stages");
        for (std::size_t s = 0; s < 4; ++s) g.stages[s] = rules_from_json(st[s]);
        out.groups.push_back(std::move(g));
    }
    return out;
}

ConceptRuleSet default_ssc_rules() {
    using K = Predicate::Kind;
    ConceptRuleSet rs;

    ConceptGroupRules lung;
    lung.group = "lung";
    lung.involvement = {{{"ild_on_hrct", K::Eq, 1}}, {{"fvc", K::Lt, 70}}};
    lung.stages[0] = {{{"fvc", K::Gt, 80}}, {{"dyspnea", K::Eq, 2}}};
    lung.stages[1] = {{{"ild_extent", K::Lt, 20}},
                      {{"fvc", K::Gt, 70}, {"fvc", K::Le, 80}},
                      {{"dyspnea", K::Eq, 3}}};
    lung.stages[2] = {{{"ild_extent", K::Gt, 20}},
                      {{"fvc", K::Ge, 50}, {"fvc", K::Le, 70}},
                      {{"dyspnea", K::Eq, 4}}};
    lung.stages[3] = {{{"fvc", K::Lt, 50}}, {{"lung_transplant", K::Eq, 1}}, {{"dyspnea", K::Eq, 4}}};
    rs.groups.push_back(std::move(lung));

    ConceptGroupRules heart;
    heart.group = "heart";
    heart.involvement = {{{"lvef", K::Lt, 45}}, {{"ntprobnp", K::Gt, 125}}};
    heart.stages[0] = {{{"dyspnea", K::Eq, 1}}};
    heart.stages[1] = {{{"dyspnea", K::Eq, 2}}};
    heart.stages[2] = {{{"dyspnea", K::Eq, 3}}};
    heart.stages[3] = {{{"dyspnea", K::Eq, 4}}};
    rs.groups.push_back(std::move(heart));

    ConceptGroupRules joints;
    joints.group = "joints";
    joints.involvement = {{{"joint_synovitis", K::Eq, 1}}, {{"tendon_friction", K::Eq, 1}}};
    joints.stages[0] = {{{"das28", K::Lt, 2.7}}};
    joints.stages[1] = {{{"das28", K::Ge, 2.7}, {"das28", K::Le, 3.2}}};
    joints.stages[2] = {{{"das28", K::Gt, 3.2}, {"das28", K::Le, 5.1}}};
    joints.stages[3] = {{{"das28", K::Gt, 5.1}}};
    rs.groups.push_back(std::move(joints));

    return rs;
}

}  // namespace trajvae
