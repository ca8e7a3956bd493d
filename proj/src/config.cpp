#include "iss/config.hpp"

#include <algorithm>
#include <cstdio>
#include <json.hpp>
#include <set>

#include "iss/csv.hpp"
#include "iss/errors.hpp"

namespace iss {

namespace {

using nlohmann::json;

// Object reader that remembers which keys were consumed, so leftovers can be
// reported as unknown.
class Node {
public:
    Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_, "expected an object");
    }

    static void fail(const std::string& path, const std::string& msg) { throw ValidationError(path + ": " + msg); }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }
    std::string at(const std::string& key) const { return path_ + "." + key; }
    const json& raw(const std::string& key) const { return j_.at(key); }

    bool boolean(const std::string& key, bool def) {
        if (!has(key)) return def;
        if (!raw(key).is_boolean()) fail(at(key), "expected true or false");
        return raw(key).get<bool>();
    }
    double number(const std::string& key, double def) {
        if (!has(key)) return def;
        if (!raw(key).is_number()) fail(at(key), "expected a number");
        return raw(key).get<double>();
    }
    std::uint64_t unsigned_int(const std::string& key, std::uint64_t def) {
        if (!has(key)) return def;
        return as_unsigned(raw(key), at(key));
    }
    int positive_int(const std::string& key, int def) {
        if (!has(key)) return def;
        const std::uint64_t v = as_unsigned(raw(key), at(key));
        if (v < 1 || v > 1000000000) fail(at(key), "expected an integer in [1, 1e9]");
        return static_cast<int>(v);
    }
    std::string string(const std::string& key, const std::string& def) {
        if (!has(key)) return def;
        if (!raw(key).is_string()) fail(at(key), "expected a string");
        return raw(key).get<std::string>();
    }
    std::vector<std::string> strings(const std::string& key) {
        if (!has(key)) return {};
        const json& a = raw(key);
        if (!a.is_array()) fail(at(key), "expected an array of strings");
        std::vector<std::string> out;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!a[i].is_string()) fail(at(key) + "[" + std::to_string(i) + "]", "expected a string");
            out.push_back(a[i].get<std::string>());
        }
        return out;
    }
    // A size or a list of per-stratum sizes.
    std::vector<std::size_t> sizes(const std::string& key) {
        if (!has(key)) return {};
        const json& a = raw(key);
        if (!a.is_array()) return {static_cast<std::size_t>(as_unsigned(a, at(key)))};
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < a.size(); ++i)
            out.push_back(static_cast<std::size_t>(as_unsigned(a[i], at(key) + "[" + std::to_string(i) + "]")));
        if (out.empty()) fail(at(key), "expected at least one size");
        return out;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) fail(at(it.key()), "unknown key");
    }

    static std::uint64_t as_unsigned(const json& v, const std::string& path) {
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        if (v.is_number_integer()) {
            if (v.get<std::int64_t>() < 0) fail(path, "expected a nonnegative integer");
            return static_cast<std::uint64_t>(v.get<std::int64_t>());
        }
        fail(path, "expected a nonnegative integer");
        return 0;
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

Method method_at(const std::string& name, const std::string& path) {
    const auto m = parse_method(name);
    if (!m) Node::fail(path, "unknown method '" + name + "' (full, cc, mice, mice_rss, mice_iss, smc, smc_rss, smc_iss)");
    return *m;
}

SimConfig parse_simulation(const json& j, const std::string& path) {
    Node n(j, path);
    SimConfig c = n.boolean("paper_scale", false) ? SimConfig::paper_scale() : SimConfig{};
    c.N = static_cast<std::size_t>(n.unsigned_int("N", c.N));
    c.n_sc = static_cast<std::size_t>(n.unsigned_int("n_sc", c.n_sc));
    c.n1 = static_cast<std::size_t>(n.unsigned_int("n1", c.n1));
    c.M = n.positive_int("M", c.M);
    c.L = n.positive_int("L", c.L);
    c.reject_limit = n.positive_int("reject_limit", c.reject_limit);
    c.alpha = n.number("alpha", c.alpha);
    if (!(c.alpha > 0.0)) Node::fail(n.at("alpha"), "must be positive");
    if (n.has("beta0")) c.beta0 = n.number("beta0", 0.0);
    c.event_fraction = n.number("event_fraction", c.event_fraction);
    if (!(c.event_fraction > 0.0 && c.event_fraction < 1.0)) Node::fail(n.at("event_fraction"), "must lie in (0,1)");
    c.interaction = n.boolean("interaction", c.interaction);
    c.stratified = n.boolean("stratified", c.stratified);
    c.replicates = n.positive_int("replicates", c.replicates);
    c.seed = n.unsigned_int("seed", c.seed);
    if (n.has("methods")) {
        const auto names = n.strings("methods");
        if (names.empty()) Node::fail(n.at("methods"), "expected at least one method");
        c.methods.clear();
        for (std::size_t i = 0; i < names.size(); ++i) {
            const Method m = method_at(names[i], n.at("methods") + "[" + std::to_string(i) + "]");
            if (std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end())
                Node::fail(n.at("methods") + "[" + std::to_string(i) + "]", "duplicate method");
            c.methods.push_back(m);
        }
    }
    n.finish();
    if (c.N < 2) Node::fail(n.at("N"), "cohort needs at least 2 subjects");
    if (c.n_sc < 2 || c.n_sc > c.N) Node::fail(n.at("n_sc"), "must lie in [2, N]");
    if (c.n_sc + c.n1 > c.N) Node::fail(n.at("n1"), "n_sc + n1 exceeds N");
    return c;
}

CovariateSpec parse_covariate(const json& j, const std::string& path) {
    Node n(j, path);
    CovariateSpec s;
    s.name = n.string("name", "");
    if (s.name.empty()) Node::fail(n.at("name"), "required");
    const std::string type = n.string("type", "continuous");
    if (type == "continuous")
        s.kind = CovariateKind::Continuous;
    else if (type == "binary")
        s.kind = CovariateKind::Binary;
    else if (type == "categorical")
        s.kind = CovariateKind::Categorical;
    else
        Node::fail(n.at("type"), "expected continuous, binary or categorical");
    const std::string block = n.string("block", "low_cost");
    if (block == "low_cost")
        s.block = Block::LowCost;
    else if (block == "expensive")
        s.block = Block::Expensive;
    else
        Node::fail(n.at("block"), "expected low_cost or expensive");
    if (s.kind == CovariateKind::Categorical) {
        s.levels = n.positive_int("levels", 0);
        if (s.levels < 2) Node::fail(n.at("levels"), "categorical covariates need at least 2 levels");
    } else if (n.has("levels")) {
        Node::fail(n.at("levels"), "only categorical covariates take levels");
    }
    n.finish();
    return s;
}

AnalysisConfig parse_analysis(const json& j, const std::string& path) {
    Node n(j, path);
    AnalysisConfig a;
    a.cohort = n.string("cohort", "");
    if (n.has("covariates")) {
        const json& cov = n.raw("covariates");
        if (!cov.is_array() || cov.empty()) Node::fail(n.at("covariates"), "expected a nonempty array");
        for (std::size_t i = 0; i < cov.size(); ++i)
            a.covariates.push_back(parse_covariate(cov[i], n.at("covariates") + "[" + std::to_string(i) + "]"));
    } else {
        Node::fail(n.at("covariates"), "required");
    }
    a.model = n.strings("model");
    if (a.model.empty()) Node::fail(n.at("model"), "required");
    a.submodel = n.strings("submodel");
    if (n.has("method")) a.method = method_at(n.string("method", ""), n.at("method"));
    a.subcohort_column = n.string("subcohort_column", a.subcohort_column);
    a.n_sc = n.sizes("n_sc");
    a.n1 = n.sizes("n1");
    a.M = n.positive_int("M", a.M);
    a.L = n.positive_int("L", a.L);
    a.reject_limit = n.positive_int("reject_limit", a.reject_limit);
    if (n.has("mice")) {
        Node m(n.raw("mice"), n.at("mice"));
        a.mice_other_x = m.boolean("other_x", a.mice_other_x);
        a.mice_outcome = m.boolean("outcome", a.mice_outcome);
        m.finish();
    }
    a.seed = n.unsigned_int("seed", a.seed);
    n.finish();
    return a;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("$: malformed JSON: ") + e.what());
    }
    Node root(j, "$");
    ExperimentConfig c;
    if (root.has("simulation")) c.simulation = parse_simulation(root.raw("simulation"), root.at("simulation"));
    if (root.has("analysis")) c.analysis = parse_analysis(root.raw("analysis"), root.at("analysis"));
    if (root.has("output")) c.output = root.string("output", "");
    if (root.has("threads")) c.threads = root.positive_int("threads", 1);
    root.finish();
    return c;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_text_file(path)); }

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace iss
