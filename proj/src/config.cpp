#include "fedmoe/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

namespace fedmoe {

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view why)
{
    throw ConfigError("config key '" + std::string(key) + "': " + std::string(why) + " (got '" +
                      std::string(value) + "')");
}

std::string_view trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v)
{
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        bad_value(key, v, "not a valid number");
    return out;
}

std::string format_double(double x)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

bool parse_bool(std::string_view key, std::string_view v)
{
    if (v == "true" || v == "1")
        return true;
    if (v == "false" || v == "0")
        return false;
    bad_value(key, v, "expected true/false");
}

std::vector<std::string_view> split_list(std::string_view v)
{
    std::vector<std::string_view> out;
    while (true) {
        const auto comma = v.find(',');
        out.push_back(trim(v.substr(0, comma)));
        if (comma == std::string_view::npos)
            break;
        v.remove_prefix(comma + 1);
    }
    return out;
}

ArchKind parse_arch(std::string_view key, std::string_view v)
{
    if (v == "linear")
        return ArchKind::linear_softmax;
    if (v == "mlp")
        return ArchKind::mlp_one_hidden;
    bad_value(key, v, "expected linear or mlp");
}

std::string arch_name(ArchKind k)
{
    return k == ArchKind::linear_softmax ? "linear" : "mlp";
}

SkewKind parse_skew(std::string_view key, std::string_view v)
{
    if (v == "iid")
        return SkewKind::iid;
    if (v == "label")
        return SkewKind::label_skew;
    if (v == "concept")
        return SkewKind::concept_shift;
    if (v == "quantity")
        return SkewKind::quantity_skew;
    bad_value(key, v, "expected iid, label, concept or quantity");
}

std::string skew_name(SkewKind k)
{
    switch (k) {
    case SkewKind::iid: return "iid";
    case SkewKind::label_skew: return "label";
    case SkewKind::concept_shift: return "concept";
    case SkewKind::quantity_skew: return "quantity";
    }
    return "label";
}

struct Range {
    double lo;
    double hi;
    bool lo_open = false;
    bool hi_open = false;

    bool contains(double x) const
    {
        return (lo_open ? x > lo : x >= lo) && (hi_open ? x < hi : x <= hi);
    }
    std::string describe() const
    {
        return std::string("must be in ") + (lo_open ? "(" : "[") + format_double(lo) + ", " + format_double(hi) +
               (hi_open ? ")" : "]");
    }
};

constexpr double kInf = 1e300;

struct Entry {
    std::string key;
    std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T, typename Access>
Entry number(std::string key, Access access, Range range)
{
    return Entry{
        std::move(key),
        [access, range](ExperimentConfig& c, std::string_view k, std::string_view v) {
            const T x = parse_number<T>(k, v);
            if (!range.contains(static_cast<double>(x)))
                bad_value(k, v, range.describe());
            access(c) = x;
        },
        [access](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
                return format_double(access(c));
            else
                return std::to_string(access(c));
        }};
}

template <typename Access>
Entry arch(std::string key, Access access)
{
    return Entry{std::move(key),
                 [access](ExperimentConfig& c, std::string_view k, std::string_view v) { access(c) = parse_arch(k, v); },
                 [access](const ExperimentConfig& c) { return arch_name(access(c)); }};
}

#define FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Entry>& entries()
{
    static const std::vector<Entry> table = [] {
        std::vector<Entry> t;
        t.push_back(number<int>("data.classes", FIELD(data.n_classes), {2, 1e6}));
        t.push_back(number<Index>("data.dim", FIELD(data.dim), {2, 1e6}));
        t.push_back(number<Index>("data.per_client_n", FIELD(data.per_client_n), {1, 1e9}));
        t.push_back(number<double>("data.separation", FIELD(data.separation), {0, kInf, true}));
        t.push_back(number<Index>("data.pool_per_class", FIELD(data.pool_per_class), {1, 1e9}));
        t.push_back(Entry{"data.skew",
                          [](ExperimentConfig& c, std::string_view k, std::string_view v) {
                              c.data.skew.kind = parse_skew(k, v);
                          },
                          [](const ExperimentConfig& c) { return skew_name(c.data.skew.kind); }});
        t.push_back(number<double>("data.p", FIELD(data.skew.p), {0, 1, true}));
        t.push_back(number<int>("data.n_majority", FIELD(data.skew.n_majority), {1, 1e6}));
        t.push_back(number<int>("data.rotation_groups", FIELD(data.skew.rotation_groups), {1, 1e6}));
        t.push_back(number<double>("data.rotation_deg", FIELD(data.rotation_deg), {-360, 360}));
        t.push_back(number<double>("data.quantity_exponent", FIELD(data.skew.exponent), {0, 100}));
        t.push_back(number<double>("data.val_fraction", FIELD(data.val_fraction), {0, 1, true, true}));
        t.push_back(number<double>("data.test_fraction", FIELD(data.test_fraction), {0, 1, true, true}));

        t.push_back(number<int>("fl.K", FIELD(fl.K), {1, 1e6}));
        t.push_back(number<double>("fl.C", FIELD(fl.C), {0, 1, true}));
        t.push_back(number<int>("fl.J", FIELD(fl.J), {1, 1e4}));
        t.push_back(number<double>("fl.epsilon", FIELD(fl.epsilon), {0, 1}));
        t.push_back(number<int>("fl.E", FIELD(fl.epochs), {1, 1e6}));
        t.push_back(number<Index>("fl.B", FIELD(fl.batch_size), {1, 1e9}));
        t.push_back(number<double>("fl.lr", FIELD(fl.learning_rate), {0, kInf, true}));
        t.push_back(number<int>("fl.rounds", FIELD(fl.max_rounds), {0, 1e7}));
        t.push_back(Entry{"fl.early_stop",
                          [](ExperimentConfig& c, std::string_view k, std::string_view v) {
                              c.fl.early_stop.enabled = parse_bool(k, v);
                          },
                          [](const ExperimentConfig& c) { return std::string(c.fl.early_stop.enabled ? "true" : "false"); }});
        t.push_back(number<int>("fl.patience", FIELD(fl.early_stop.patience), {1, 1e6}));
        t.push_back(number<double>("fl.min_delta", FIELD(fl.early_stop.min_delta), {0, kInf}));
        t.push_back(number<int>("fl.threads", FIELD(fl.threads), {1, 1024}));

        t.push_back(arch("model.cluster", FIELD(model.cluster_kind)));
        t.push_back(number<Index>("model.cluster_hidden", FIELD(model.cluster_hidden), {1, 1e6}));
        t.push_back(arch("model.local", FIELD(model.local_kind)));
        t.push_back(number<Index>("model.local_hidden", FIELD(model.local_hidden), {1, 1e6}));
        t.push_back(arch("model.gate", FIELD(model.gate_kind)));
        t.push_back(number<Index>("model.gate_hidden", FIELD(model.gate_hidden), {1, 1e6}));

        t.push_back(number<double>("local.lr", FIELD(personal.local_opt.learning_rate), {0, kInf, true}));
        t.push_back(number<double>("local.weight_decay", FIELD(personal.local_opt.weight_decay), {0, kInf}));
        t.push_back(number<int>("local.epochs", FIELD(personal.local_epochs), {0, 1e6}));
        t.push_back(number<Index>("local.batch", FIELD(personal.local_batch), {1, 1e9}));
        t.push_back(number<double>("gate.lr", FIELD(personal.gate_opt.learning_rate), {0, kInf, true}));
        t.push_back(number<double>("gate.weight_decay", FIELD(personal.gate_opt.weight_decay), {0, kInf}));
        t.push_back(number<int>("gate.epochs", FIELD(personal.gate_epochs), {0, 1e6}));
        t.push_back(number<Index>("gate.batch", FIELD(personal.gate_batch), {1, 1e9}));
        t.push_back(number<int>("finetune.epochs", FIELD(finetune_epochs), {0, 1e6}));

        t.push_back(number<int>("experiment.trials", FIELD(trials), {1, 1e6}));
        t.push_back(number<std::uint64_t>("experiment.seed", FIELD(seed), {0, 1.8446744073709552e19}));
        t.push_back(Entry{"experiment.out",
                          [](ExperimentConfig& c, std::string_view, std::string_view v) { c.output_dir = v; },
                          [](const ExperimentConfig& c) { return c.output_dir; }});

        t.push_back(Entry{"sweep.p",
                          [](ExperimentConfig& c, std::string_view k, std::string_view v) {
                              c.sweep_p.clear();
                              for (auto item : split_list(v)) {
                                  const double p = parse_number<double>(k, item);
                                  if (!(p > 0.0 && p <= 1.0))
                                      bad_value(k, item, "must be in (0, 1]");
                                  c.sweep_p.push_back(p);
                              }
                          },
                          [](const ExperimentConfig& c) {
                              std::string s;
                              for (std::size_t i = 0; i < c.sweep_p.size(); ++i)
                                  s += (i ? "," : "") + format_double(c.sweep_p[i]);
                              return s;
                          }});
        t.push_back(Entry{"sweep.J",
                          [](ExperimentConfig& c, std::string_view k, std::string_view v) {
                              c.sweep_J.clear();
                              for (auto item : split_list(v)) {
                                  const int J = parse_number<int>(k, item);
                                  if (J < 1)
                                      bad_value(k, item, "must be >= 1");
                                  c.sweep_J.push_back(J);
                              }
                          },
                          [](const ExperimentConfig& c) {
                              std::string s;
                              for (std::size_t i = 0; i < c.sweep_J.size(); ++i)
                                  s += (i ? "," : "") + std::to_string(c.sweep_J[i]);
                              return s;
                          }});
        return t;
    }();
    return table;
}

#undef FIELD

}  // namespace

std::vector<double> ExperimentConfig::p_values() const
{
    return sweep_p.empty() ? std::vector<double>{data.skew.p} : sweep_p;
}

std::vector<int> ExperimentConfig::J_values() const
{
    return sweep_J.empty() ? std::vector<int>{fl.J} : sweep_J;
}

ArchSpec ExperimentConfig::cluster_arch() const
{
    return model.cluster_kind == ArchKind::linear_softmax
               ? ArchSpec::linear(data.dim, data.n_classes)
               : ArchSpec::mlp(data.dim, model.cluster_hidden, data.n_classes);
}

ArchSpec ExperimentConfig::local_arch() const
{
    return model.local_kind == ArchKind::linear_softmax ? ArchSpec::linear(data.dim, data.n_classes)
                                                        : ArchSpec::mlp(data.dim, model.local_hidden, data.n_classes);
}

ArchSpec ExperimentConfig::gate_arch(int J) const
{
    return model.gate_kind == ArchKind::linear_softmax ? ArchSpec::linear(data.dim, J + 1)
                                                       : ArchSpec::mlp(data.dim, model.gate_hidden, J + 1);
}

FineTuneConfig ExperimentConfig::finetune() const
{
    return FineTuneConfig{finetune_epochs > 0 ? finetune_epochs : fl.epochs * 5, fl.batch_size, fl.learning_rate};
}

void ExperimentConfig::validate() const
{
    if (data.n_classes < 2)
        throw ConfigError("data.classes must be >= 2");
    if (data.dim < 2)
        throw ConfigError("data.dim must be >= 2");
    if (!(data.val_fraction + data.test_fraction < 1.0))
        throw ConfigError("data.val_fraction + data.test_fraction must be < 1");
    for (double p : p_values()) {
        SkewSpec s = data.skew;
        s.p = p;
        try {
            s.validate(data.n_classes);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(sweep_p.empty() ? "data.p" : "sweep.p") + ": " + e.what());
        }
    }
    if (trials < 1)
        throw ConfigError("experiment.trials must be >= 1");
    for (int J : J_values()) {
        FLConfig f = fl;
        f.J = J;
        f.validate();
        PersonalizationConfig pc = personal;
        pc.local_arch = local_arch();
        pc.gate_arch = gate_arch(J);
        pc.validate(data.dim, data.n_classes, J);
    }
}

ExperimentConfig parse_config(std::string_view text)
{
    ExperimentConfig cfg;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        const auto& table = entries();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Entry& e) { return e.key == key; });
        if (it == table.end())
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
        if (value.empty())
            throw ConfigError("config key '" + std::string(key) + "': missing value");
        it->set(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg)
{
    std::string out;
    for (const auto& e : entries()) {
        const std::string v = e.get(cfg);
        if (v.empty())
            continue;  // unset sweeps
        out += e.key + "=" + v + "\n";
    }
    return out;
}

std::vector<std::string> config_keys()
{
    std::vector<std::string> keys;
    for (const auto& e : entries())
        keys.push_back(e.key);
    return keys;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b)
{
    return serialize_config(a) == serialize_config(b);
}

}  // namespace fedmoe
