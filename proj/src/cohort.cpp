#include "trajvae/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "trajvae/rng.hpp"

namespace trajvae {

using nlohmann::json;

namespace {
const double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void fail(const std::string& origin, const std::string& who, const std::string& what) {
    throw ParseError(origin + ": " + who + ": " + what);
}
}  // namespace

int FeatureSchema::feature_index(const std::string& name) const {
    for (int d = 0; d < D(); ++d)
        if (feature_name(d) == name) return d;
    return -1;
}

int FeatureSchema::concept_index(const std::string& name) const {
    for (int p = 0; p < P(); ++p)
        if (concepts[static_cast<std::size_t>(p)].name == name) return p;
    return -1;
}

void FeatureSchema::validate() const {
    for (const auto& c : categorical)
        if (c.num_classes < 2) throw ParseError("schema: categorical feature '" + c.name + "' needs >= 2 classes");
    for (const auto& c : concepts) {
        if (c.num_classes < 2) throw ParseError("schema: concept '" + c.name + "' needs >= 2 classes");
        if (c.group.empty()) throw ParseError("schema: concept '" + c.name + "' has no group");
    }
}

std::string FeatureSchema::to_json_line() const {
    json j;
    j["type"] = "schema";
    j["continuous"] = json::array();
    for (const auto& f : continuous) j["continuous"].push_back({{"name", f.name}, {"unit", f.unit}});
    j["categorical"] = json::array();
    for (const auto& f : categorical)
        j["categorical"].push_back({{"name", f.name}, {"num_classes", f.num_classes}});
    j["concepts"] = json::array();
    for (const auto& c : concepts)
        j["concepts"].push_back({{"name", c.name}, {"num_classes", c.num_classes}, {"group", c.group}});
    j["static"] = json::array();
    for (const auto& s : statics) j["static"].push_back({{"name", s.name}, {"kind", s.kind}});
    return j.dump();
}

FeatureSchema FeatureSchema::from_json_line(const std::string& line) {
    json j = json::parse(line);
    if (!j.contains("type") || j["type"] != "schema") throw ParseError("first line is not a schema object");
    FeatureSchema s;
    for (const auto& f : j.at("continuous"))
        s.continuous.push_back({f.at("name").get<std::string>(), f.value("unit", "")});
    for (const auto& f : j.at("categorical"))
        s.categorical.push_back({f.at("name").get<std::string>(), f.at("num_classes").get<int>()});
    for (const auto& c : j.at("concepts"))
        s.concepts.push_back({c.at("name").get<std::string>(), c.at("num_classes").get<int>(),
                              c.at("group").get<std::string>()});
    for (const auto& f : j.value("static", json::array()))
        s.statics.push_back({f.at("name").get<std::string>(), f.value("kind", "real")});
    s.validate();
    return s;
}

namespace {

PatientRecord parse_patient(const json& j, const FeatureSchema& schema, const std::string& origin) {
    PatientRecord p;
    p.id = j.at("id").get<std::string>();
    p.D = schema.D();
    p.P = schema.P();
    for (const auto& v : j.value("s", json::array())) p.s.push_back(v.get<double>());
    if (static_cast<int>(p.s.size()) != schema.S())
        fail(origin, p.id, "static vector length " + std::to_string(p.s.size()) + " != schema S");
    for (const auto& v : j.at("tau")) p.tau.push_back(v.get<double>());
    if (p.tau.empty()) fail(origin, p.id, "patient has no visits");
    for (std::size_t t = 1; t < p.tau.size(); ++t)
        if (!(p.tau[t] > p.tau[t - 1])) fail(origin, p.id, "non-increasing times at row " + std::to_string(t));

    int T = p.T();
    p.x.assign(static_cast<std::size_t>(T) * p.D, kNaN);
    p.ox.assign(static_cast<std::size_t>(T) * p.D, 0);
    p.y.assign(static_cast<std::size_t>(T) * p.P, kNaN);
    p.oy.assign(static_cast<std::size_t>(T) * p.P, 0);

    const json& xs = j.at("x");
    if (static_cast<int>(xs.size()) != T) fail(origin, p.id, "x row count != T");
    for (int t = 0; t < T; ++t) {
        const json& row = xs[static_cast<std::size_t>(t)];
        if (static_cast<int>(row.size()) != p.D) fail(origin, p.id, "x row " + std::to_string(t) + " has wrong width");
        for (int d = 0; d < p.D; ++d) {
            const json& cell = row[static_cast<std::size_t>(d)];
            if (cell.is_null()) continue;
            double v = cell.get<double>();
            if (!std::isfinite(v)) fail(origin, p.id, "non-finite x cell at row " + std::to_string(t));
            if (schema.is_categorical(d)) {
                int cls = static_cast<int>(v);
                if (cls < 0 || cls >= schema.cat_classes(d) || v != static_cast<double>(cls))
                    fail(origin, p.id, "categorical value out of range at row " + std::to_string(t) +
                                           " feature " + schema.feature_name(d));
            }
            p.set_x(t, d, v);
        }
    }
    const json& ys = j.at("y");
    if (static_cast<int>(ys.size()) != T) fail(origin, p.id, "y row count != T");
    for (int t = 0; t < T; ++t) {
        const json& row = ys[static_cast<std::size_t>(t)];
        if (static_cast<int>(row.size()) != p.P) fail(origin, p.id, "y row " + std::to_string(t) + " has wrong width");
        for (int c = 0; c < p.P; ++c) {
            const json& cell = row[static_cast<std::size_t>(c)];
            if (cell.is_null()) continue;
            double v = cell.get<double>();
            int cls = static_cast<int>(v);
            if (cls < 0 || cls >= schema.concepts[static_cast<std::size_t>(c)].num_classes ||
                v != static_cast<double>(cls))
                fail(origin, p.id, "concept class out of range at row " + std::to_string(t) + " concept " +
                                       schema.concepts[static_cast<std::size_t>(c)].name);
            p.set_y(t, c, cls);
        }
    }
    if (j.contains("p") && !j["p"].is_null()) {
        const json& ps = j["p"];
        if (static_cast<int>(ps.size()) != T) fail(origin, p.id, "p row count != T");
        p.M = ps.empty() ? 0 : static_cast<int>(ps[0].size());
        for (const auto& row : ps)
            for (const auto& cell : row) p.meds.push_back(cell.is_null() ? kNaN : cell.get<double>());
    }
    return p;
}

json patient_to_json(const PatientRecord& p, const FeatureSchema& schema) {
    json j;
    j["id"] = p.id;
    j["s"] = p.s;
    j["tau"] = p.tau;
    json xs = json::array();
    for (int t = 0; t < p.T(); ++t) {
        json row = json::array();
        for (int d = 0; d < p.D; ++d) {
            if (p.x_observed(t, d))
                row.push_back(p.xat(t, d));
            else
                row.push_back(nullptr);
        }
        xs.push_back(std::move(row));
    }
    j["x"] = std::move(xs);
    json ys = json::array();
    for (int t = 0; t < p.T(); ++t) {
        json row = json::array();
        for (int c = 0; c < p.P; ++c) {
            if (p.y_observed(t, c))
                row.push_back(static_cast<int>(p.yat(t, c)));
            else
                row.push_back(nullptr);
        }
        ys.push_back(std::move(row));
    }
    j["y"] = std::move(ys);
    if (p.M > 0) {
        json ps = json::array();
        for (int t = 0; t < p.T(); ++t) {
            json row = json::array();
            for (int m = 0; m < p.M; ++m) {
                double v = p.meds[static_cast<std::size_t>(t) * p.M + m];
                if (std::isnan(v))
                    row.push_back(nullptr);
                else
                    row.push_back(v);
            }
            ps.push_back(std::move(row));
        }
        j["p"] = std::move(ps);
    }
    (void)schema;
    return j;
}

}  // namespace

Cohort parse_cohort_stream(std::istream& in, const std::string& origin) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(origin + ": empty cohort file");
    Cohort cohort;
    try {
        cohort.schema = FeatureSchema::from_json_line(line);
    } catch (const json::exception& e) {
        throw ParseError(origin + ": schema line: " + e.what());
    }
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(origin + ": line " + std::to_string(lineno) + ": " + e.what());
        }
        try {
            cohort.patients.push_back(parse_patient(j, cohort.schema, origin));
        } catch (const json::exception& e) {
            throw ParseError(origin + ": line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cohort;
}

Cohort parse_cohort(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");
    return parse_cohort_stream(in, path);
}

void write_cohort(const Cohort& cohort, const std::string& path, const std::string& meta) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw ParseError(tmp + ": cannot open for writing");
        json header = json::parse(cohort.schema.to_json_line());
        if (!meta.empty()) header["meta"] = meta;
        out << header.dump() << "\n";
        for (const auto& p : cohort.patients) out << patient_to_json(p, cohort.schema).dump() << "\n";
    }
    std::rename(tmp.c_str(), path.c_str());
}

Cohort filter_min_visits(const Cohort& cohort, int min_T) {
    if (min_T < 1) throw ContractError("filter_min_visits: min_T must be >= 1");
    Cohort out;
    out.schema = cohort.schema;
    for (const auto& p : cohort.patients)
        if (p.T() >= min_T) out.patients.push_back(p);
    return out;
}

ScalerStats standardize(Cohort& cohort, const std::optional<ScalerStats>& given) {
    int C = cohort.schema.num_continuous();
    ScalerStats stats;
    if (given) {
        stats = *given;
        if (static_cast<int>(stats.mean.size()) != C)
            throw ContractError("standardize: stats do not cover all continuous features");
    } else {
        stats.mean.assign(static_cast<std::size_t>(C), 0.0);
        stats.sd.assign(static_cast<std::size_t>(C), 1.0);
        for (int d = 0; d < C; ++d) {
            double sum = 0.0, sum2 = 0.0;
            long n = 0;
            for (const auto& p : cohort.patients)
                for (int t = 0; t < p.T(); ++t)
                    if (p.x_observed(t, d)) {
                        sum += p.xat(t, d);
                        sum2 += p.xat(t, d) * p.xat(t, d);
                        ++n;
                    }
            if (n == 0) continue;  // mean 0, sd 1 fallback
            double mean = sum / static_cast<double>(n);
            double var = sum2 / static_cast<double>(n) - mean * mean;  // population variance
            stats.mean[static_cast<std::size_t>(d)] = mean;
            stats.sd[static_cast<std::size_t>(d)] = var > 1e-16 ? std::sqrt(var) : 1.0;
        }
    }
    for (auto& p : cohort.patients)
        for (int t = 0; t < p.T(); ++t)
            for (int d = 0; d < C; ++d)
                if (p.x_observed(t, d))
                    p.xat(t, d) = (p.xat(t, d) - stats.mean[static_cast<std::size_t>(d)]) /
                                  stats.sd[static_cast<std::size_t>(d)];
    return stats;
}

void unstandardize(Cohort& cohort, const ScalerStats& stats) {
    int C = cohort.schema.num_continuous();
    for (auto& p : cohort.patients)
        for (int t = 0; t < p.T(); ++t)
            for (int d = 0; d < C; ++d)
                if (p.x_observed(t, d))
                    p.xat(t, d) = p.xat(t, d) * stats.sd[static_cast<std::size_t>(d)] +
                                  stats.mean[static_cast<std::size_t>(d)];
}

std::string ScalerStats::to_json() const {
    json j;
    j["mean"] = mean;
    j["sd"] = sd;
    return j.dump();
}

ScalerStats ScalerStats::from_json(const std::string& s) {
    json j = json::parse(s);
    ScalerStats st;
    st.mean = j.at("mean").get<std::vector<double>>();
    st.sd = j.at("sd").get<std::vector<double>>();
    return st;
}

SplitResult split(const Cohort& cohort, double f_train, double f_val, double f_test,
                  std::uint64_t seed) {
    if (f_train <= 0 || f_val <= 0 || f_test <= 0 || std::fabs(f_train + f_val + f_test - 1.0) > 1e-9)
        throw ContractError("split: fractions must be positive and sum to 1");
    int n = cohort.size();
    if (n < 3) throw ContractError("split: cohort smaller than 3 patients");

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::derive(seed, "split"));
    for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)],
                                              order[static_cast<std::size_t>(rng.uniform_int(i + 1))]);

    int n_train = static_cast<int>(std::lround(f_train * n));
    int n_val = static_cast<int>(std::lround(f_val * n));
    n_train = std::max(1, std::min(n_train, n - 2));
    n_val = std::max(1, std::min(n_val, n - n_train - 1));

    SplitResult out;
    out.train.schema = out.val.schema = out.test.schema = cohort.schema;
    for (int i = 0; i < n; ++i) {
        const PatientRecord& p = cohort.patients[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        if (i < n_train)
            out.train.patients.push_back(p);
        else if (i < n_train + n_val)
            out.val.patients.push_back(p);
        else
            out.test.patients.push_back(p);
    }
    return out;
}

}  // namespace trajvae
