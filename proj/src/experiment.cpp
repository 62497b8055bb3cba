#include "fedmoe/experiment.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <utility>
#include <sstream>

#include "fedmoe/parallel.hpp"
#include "json.hpp"

namespace fedmoe {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_number(double x)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

std::string RunSpec::id() const
{
    return "t" + std::to_string(trial) + "_p" + format_number(p) + "_J" + std::to_string(J);
}

const MethodResult& RunOutcome::method(Method m) const
{
    for (const auto& r : methods)
        if (r.method == m)
            return r;
    throw ConfigError("run outcome: method " + method_name(m) + " missing");
}

std::vector<RunSpec> plan_runs(const ExperimentConfig& cfg)
{
    std::vector<RunSpec> runs;
    for (int t = 0; t < cfg.trials; ++t) {
        const auto trial = static_cast<std::uint64_t>(t);
        for (double p : cfg.p_values()) {
            for (int J : cfg.J_values()) {
                RunSpec s;
                s.trial = t;
                s.p = p;
                s.J = J;
                s.data_seed = derive_seed(cfg.seed, trial, "data");
                s.federation_seed = derive_seed(cfg.seed, trial, "federation");
                s.personalize_seed = derive_seed(cfg.seed, trial, "personalize");
                s.finetune_seed = derive_seed(cfg.seed, trial, "finetune");
                runs.push_back(s);
            }
        }
    }
    return runs;
}

std::vector<ClientPartition> build_partitions(const DataConfig& data, int K, double p, std::uint64_t seed)
{
    SkewSpec skew = data.skew;
    skew.p = p;
    skew.rotation_step = data.rotation_deg * std::numbers::pi / 180.0;
    skew.validate(data.n_classes);

    const std::uint64_t partition_seed = derive_seed(seed, 0, "partition");
    std::vector<ClientPartition> parts;
    switch (skew.kind) {
    case SkewKind::iid:
    case SkewKind::label_skew:
    case SkewKind::concept_shift: {
        const Dataset pool =
            generate_base_dataset(derive_seed(seed, 0, "pool"), data.n_classes, data.dim, data.pool_per_class,
                                  data.separation);
        const double frac = skew.kind == SkewKind::iid ? static_cast<double>(skew.n_majority) / data.n_classes : p;
        parts = partition_label_skew(pool, data.n_classes, K, frac, skew.n_majority, data.per_client_n,
                                     partition_seed);
        if (skew.kind == SkewKind::concept_shift) {
            for (auto& part : parts) {
                part.group = part.client_id % skew.rotation_groups;
                part.train = apply_concept_shift(part.train, part.group * skew.rotation_step);
            }
        }
        break;
    }
    case SkewKind::quantity_skew: {
        const Index total = static_cast<Index>(K) * data.per_client_n;
        const Index per_class = (total + data.n_classes - 1) / data.n_classes;
        Dataset pool = generate_base_dataset(derive_seed(seed, 0, "pool"), data.n_classes, data.dim, per_class,
                                             data.separation);
        std::vector<Index> first(total);
        for (Index i = 0; i < total; ++i)
            first[i] = i;
        parts = partition_quantity_skew(pool.rows(first), K, skew.exponent, partition_seed);
        break;
    }
    }

    std::vector<ClientPartition> out;
    out.reserve(parts.size());
    for (const auto& part : parts)
        out.push_back(split_train_val_test(part, data.val_fraction, data.test_fraction,
                                           derive_seed(seed, static_cast<std::uint64_t>(part.client_id), "split")));
    return out;
}

RunOutcome run_single(const ExperimentConfig& cfg, const RunSpec& spec)
{
    RunOutcome out;
    out.spec = spec;
    const auto clients = build_partitions(cfg.data, cfg.fl.K, spec.p, spec.data_seed);

    FLConfig fl = cfg.fl;
    fl.J = spec.J;
    out.federation = run_federation(fl, cfg.cluster_arch(), clients, spec.federation_seed);
    const ClusterModelSet& clusters = out.federation.clusters;

    PersonalizationConfig pc = cfg.personal;
    pc.local_arch = cfg.local_arch();
    pc.gate_arch = cfg.gate_arch(spec.J);
    pc.threads = cfg.fl.threads;
    out.personal = personalize_all(clients, clusters, pc, spec.personalize_seed);

    out.assignments = final_assignments(clients, clusters);
    out.usage = cluster_usage(out.assignments, spec.J);

    const FineTuneConfig ft = cfg.finetune();
    std::vector<std::vector<double>> acc(std::size(kAllMethods), std::vector<double>(clients.size()));
    auto slot = [&](Method m) -> std::vector<double>& { return acc[static_cast<std::size_t>(m)]; };
    out.gate_weights.resize(clients.size());
    parallel_for(clients.size(), cfg.fl.threads, [&](std::size_t i) {
        const auto& c = clients[i];
        const auto& pers = out.personal[i];
        slot(Method::moe)[i] = eval_moe(c, clusters, pers);
        slot(Method::ifca_select)[i] = eval_ifca_select(c, clusters);
        slot(Method::ensemble)[i] = eval_ensemble(c, clusters, pers.local);
        slot(Method::fine_tuned)[i] =
            eval_fine_tuned(c, clusters, ft, derive_seed(spec.finetune_seed, static_cast<std::uint64_t>(c.client_id), "client"));
        slot(Method::local)[i] = eval_local(c, pers.local);
        out.gate_weights[i] = mean_gate_weights(c, pers);
    });
    for (Method m : kAllMethods)
        out.methods.push_back(summarize(m, slot(m)));
    for (const auto& c : clients)
        out.groups.push_back(c.group);
    return out;
}

namespace {

struct CsvTables {
    std::string client_accuracy = "trial,p,J,method,client,accuracy\n";
    std::string summary = "trial,p,J,method,mean,std,n_clients\n";
    std::string cdf = "trial,p,J,method,accuracy,cum_fraction\n";
    std::string usage = "trial,p,J,rank,model,count,normalized_entropy\n";
    std::string gates = "trial,p,J,client,expert,weight\n";
    std::string communication = "trial,p,J,rounds,downlink,uplink,active_models\n";
    std::string assignments = "trial,p,J,client,group,cluster\n";

    void add(const RunOutcome& r)
    {
        const std::string key =
            std::to_string(r.spec.trial) + "," + format_number(r.spec.p) + "," + std::to_string(r.spec.J) + ",";
        for (const auto& m : r.methods) {
            const std::string mk = key + method_name(m.method) + ",";
            for (std::size_t i = 0; i < m.accuracies.size(); ++i)
                client_accuracy += mk + std::to_string(i) + "," + format_number(m.accuracies[i]) + "\n";
            summary += mk + format_number(m.mean) + "," + format_number(m.stddev) + "," +
                       std::to_string(m.accuracies.size()) + "\n";
            for (const auto& [a, f] : client_accuracy_cdf(m.accuracies))
                cdf += mk + format_number(a) + "," + format_number(f) + "\n";
        }
        for (std::size_t i = 0; i < r.usage.counts.size(); ++i)
            usage += key + std::to_string(i) + "," + std::to_string(r.usage.models[i]) + "," +
                     std::to_string(r.usage.counts[i]) + "," + format_number(r.usage.normalized_entropy) + "\n";
        for (std::size_t k = 0; k < r.gate_weights.size(); ++k)
            for (Index e = 0; e < r.gate_weights[k].size(); ++e)
                gates += key + std::to_string(k) + "," + (e == 0 ? std::string("local") : "cluster_" + std::to_string(e - 1)) +
                         "," + format_number(r.gate_weights[k](e)) + "\n";
        communication += key + std::to_string(r.federation.log.size()) + "," +
                         std::to_string(r.federation.total_downlink) + "," +
                         std::to_string(r.federation.total_uplink) + "," +
                         std::to_string(r.federation.clusters.active.size()) + "\n";
        for (std::size_t k = 0; k < r.assignments.size(); ++k)
            assignments += key + std::to_string(k) + "," + std::to_string(r.groups[k]) + "," +
                           std::to_string(r.assignments[k]) + "\n";
    }
};

void write_file(const fs::path& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot write " + path.string());
    f << text;
}

json config_json(const ExperimentConfig& cfg)
{
    json j = json::object();
    std::istringstream in(serialize_config(cfg));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        j[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return j;
}

// summary.csv goes last so its presence marks a finished write.
const std::pair<const char*, std::string CsvTables::*> kCsvFiles[] = {
    {"client_accuracy.csv", &CsvTables::client_accuracy},
    {"cdf.csv", &CsvTables::cdf},
    {"usage.csv", &CsvTables::usage},
    {"gate_weights.csv", &CsvTables::gates},
    {"communication.csv", &CsvTables::communication},
    {"assignments.csv", &CsvTables::assignments},
    {"summary.csv", &CsvTables::summary},
};

void write_tables(const fs::path& dir, const CsvTables& t)
{
    for (const auto& [name, member] : kCsvFiles)
        write_file(dir / name, t.*member);
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg, const RunOptions& opts)
{
    cfg.validate();
    const fs::path out = opts.out_dir.empty() ? fs::path(cfg.output_dir) : opts.out_dir;
    fs::create_directories(out / "runs");
    auto log = [&](const std::string& msg) {
        if (opts.log)
            opts.log(msg);
    };

    const auto runs = plan_runs(cfg);
    json manifest;
    manifest["schema"] = kManifestSchema;
    manifest["config"] = config_json(cfg);
    manifest["status"] = "running";
    manifest["partial"] = true;
    manifest["files"] = json::array();
    for (const auto& f : kCsvFiles)
        manifest["files"].push_back(f.first);
    manifest["runs"] = json::array();
    for (const auto& r : runs) {
        manifest["runs"].push_back({{"id", r.id()},
                                    {"trial", r.trial},
                                    {"p", r.p},
                                    {"J", r.J},
                                    {"seeds",
                                     {{"data", r.data_seed},
                                      {"federation", r.federation_seed},
                                      {"personalize", r.personalize_seed},
                                      {"finetune", r.finetune_seed}}},
                                    {"dir", (fs::path("runs") / r.id()).string()},
                                    {"status", "pending"}});
    }
    write_file(out / "manifest.json", manifest.dump(2) + "\n");

    std::vector<std::optional<RunOutcome>> results(runs.size());
    std::vector<std::string> errors(runs.size());
    std::mutex log_mutex;
    parallel_for(runs.size(), opts.parallel, [&](std::size_t i) {
        const RunSpec& spec = runs[i];
        {
            std::lock_guard lock(log_mutex);
            log("run " + spec.id() + " started");
        }
        try {
            RunOutcome r = run_single(cfg, spec);
            const fs::path dir = out / "runs" / spec.id();
            fs::create_directories(dir);
            std::ostringstream rounds;
            write_round_log_jsonl(rounds, r.federation.log);
            write_file(dir / "rounds.jsonl", rounds.str());
            CsvTables t;
            t.add(r);
            write_tables(dir, t);
            results[i] = std::move(r);
            std::lock_guard lock(log_mutex);
            log("run " + spec.id() + " done: moe=" + format_number(results[i]->method(Method::moe).mean) +
                " ifca=" + format_number(results[i]->method(Method::ifca_select).mean));
        } catch (const std::exception& e) {
            errors[i] = e.what();
            std::lock_guard lock(log_mutex);
            log("run " + spec.id() + " failed: " + errors[i]);
        }
    });

    CsvTables combined;
    bool all_ok = true;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        auto& entry = manifest["runs"][i];
        if (results[i]) {
            combined.add(*results[i]);
            entry["status"] = "ok";
        } else {
            all_ok = false;
            entry["status"] = "failed";
            entry["error"] = errors[i];
        }
    }
    write_tables(out, combined);

    manifest["status"] = all_ok ? "complete" : "failed";
    manifest["partial"] = !all_ok;
    write_file(out / "manifest.json", manifest.dump(2) + "\n");
    return all_ok ? 0 : 1;
}

void write_partitions_jsonl(std::ostream& os, const std::vector<ClientPartition>& clients)
{
    auto emit = [&](int client, const char* split, const Dataset& d) {
        for (Index i = 0; i < d.size(); ++i) {
            json j;
            j["client_id"] = client;
            j["split"] = split;
            j["label"] = d.labels(i);
            std::vector<double> f(static_cast<std::size_t>(d.dim()));
            for (Index c = 0; c < d.dim(); ++c)
                f[static_cast<std::size_t>(c)] = d.features(i, c);
            j["features"] = f;
            os << j.dump() << '\n';
        }
    };
    for (const auto& c : clients) {
        emit(c.client_id, "train", c.train);
        emit(c.client_id, "validation", c.validation);
        emit(c.client_id, "test", c.test);
    }
}

std::vector<ClientPartition> read_partitions_jsonl(std::istream& is)
{
    struct Rows {
        std::vector<std::vector<double>> x;
        std::vector<int> y;
    };
    std::map<int, std::map<std::string, Rows>> by_client;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        const json j = json::parse(line);
        auto& rows = by_client[j.at("client_id").get<int>()][j.at("split").get<std::string>()];
        rows.x.push_back(j.at("features").get<std::vector<double>>());
        rows.y.push_back(j.at("label").get<int>());
    }
    auto to_dataset = [](const Rows& r) {
        Dataset d;
        const Index n = static_cast<Index>(r.y.size());
        const Index dim = n ? static_cast<Index>(r.x.front().size()) : 0;
        d.features.resize(n, dim);
        d.labels.resize(n);
        for (Index i = 0; i < n; ++i) {
            if (static_cast<Index>(r.x[i].size()) != dim)
                throw ShapeError("partitions: ragged feature rows");
            for (Index c = 0; c < dim; ++c)
                d.features(i, c) = r.x[i][c];
            d.labels(i) = r.y[i];
        }
        return d;
    };
    std::vector<ClientPartition> out;
    for (auto& [id, splits] : by_client) {
        ClientPartition p;
        p.client_id = id;
        p.train = to_dataset(splits["train"]);
        p.validation = to_dataset(splits["validation"]);
        p.test = to_dataset(splits["test"]);
        out.push_back(std::move(p));
    }
    return out;
}

void write_round_log_jsonl(std::ostream& os, const std::vector<RoundRecord>& log)
{
    for (const auto& r : log) {
        for (const auto& c : r.clients) {
            json j = {{"type", "client"},   {"round", r.round},         {"client", c.client_id},
                      {"cluster", c.cluster}, {"explored", c.explored}, {"n_k", c.n_k}};
            os << j.dump() << '\n';
        }
        for (const auto& m : r.models) {
            json j = {{"type", "model"},          {"round", r.round},       {"model", m.model},
                      {"n_j", m.n_j},             {"n_clients", m.n_clients}, {"active", m.active_after},
                      {"stopped", m.stopped},     {"downlink", r.downlink},   {"uplink", r.uplink}};
            j["val_loss"] = std::isnan(m.val_loss) ? json(nullptr) : json(m.val_loss);
            os << j.dump() << '\n';
        }
    }
}

void export_data(const ExperimentConfig& cfg, const fs::path& out_dir)
{
    cfg.validate();
    fs::create_directories(out_dir);
    for (int t = 0; t < cfg.trials; ++t) {
        const std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(t), "data");
        for (double p : cfg.p_values()) {
            const auto clients = build_partitions(cfg.data, cfg.fl.K, p, seed);
            std::ofstream f(out_dir / ("data_t" + std::to_string(t) + "_p" + format_number(p) + ".jsonl"),
                            std::ios::binary);
            if (!f)
                throw std::runtime_error("cannot write partitions under " + out_dir.string());
            write_partitions_jsonl(f, clients);
        }
    }
}

}  // namespace fedmoe
