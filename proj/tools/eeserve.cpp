// eeserve — trace-driven early-exit serving simulator.
//
// Subcommands:
//   run        load an experiment config, simulate, write artifacts
//   gen-trace  materialize a synthetic workload from a generator config
//   sweep      rerun one experiment across parameter values and modes
//   report     re-aggregate an event log into a metrics report
//
// Exit codes: 0 success, 2 for usage / config / input errors (everything
// that fails before execution starts), 1 for errors during execution or
// while writing outputs. Any `--<section>.<key> <value>` pair on the
// command line is applied as a config override before parsing, e.g.
// `--policy.th 0.8` or `--memory.capacity_bytes 40000000000`.

#include <CLI11.hpp>

#include <eeserve/config.hpp>
#include <eeserve/engine.hpp>
#include <eeserve/events.hpp>
#include <eeserve/generator.hpp>
#include <eeserve/log.hpp>
#include <eeserve/metrics.hpp>

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace fs = std::filesystem;
using eeserve::Json;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// True for tokens like `--policy.th` or `--workload.generator.seed=5`:
/// a long option whose name contains a dot. None of the built-in flags do,
/// so these are unambiguous config overrides.
bool is_override_key(const std::string& arg) {
    if (arg.rfind("--", 0) != 0) return false;
    const std::size_t eq = arg.find('=');
    const std::string body = arg.substr(2, eq == std::string::npos ? eq : eq - 2);
    return body.find('.') != std::string::npos;
}

/// Pulls override pairs out of the raw argument list so CLI11 never sees
/// them. Returns false (usage error) when a key is missing its value.
bool extract_overrides(std::vector<std::string>& args, Overrides& overrides) {
    std::vector<std::string> kept;
    kept.reserve(args.size());
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (!is_override_key(a)) {
            kept.push_back(a);
            continue;
        }
        const std::size_t eq = a.find('=');
        if (eq != std::string::npos) {
            overrides.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
            continue;
        }
        if (i + 1 >= args.size()) {
            std::cerr << "override " << a << " needs a value\n";
            return false;
        }
        overrides.emplace_back(a.substr(2), args[++i]);
    }
    args = std::move(kept);
    return true;
}

eeserve::Trace materialize_workload(const eeserve::ExperimentConfig& cfg,
                                    const eeserve::ModelRepository& repo) {
    if (!cfg.workload_path.empty()) {
        eeserve::Trace trace = eeserve::read_workload(cfg.workload_path);
        eeserve::validate_workload(trace, repo);
        return trace;
    }
    return eeserve::generate_workload(*cfg.generator, repo);
}

void print_summary(const eeserve::MetricsReport& r) {
    using eeserve::detail::fmt_double;
    std::cout << "throughput_tok_s=" << fmt_double(r.throughput_tok_s)
              << " mean_ttft_s=" << fmt_double(r.mean_ttft_s)
              << " mean_tpot_s=" << fmt_double(r.mean_tpot_s)
              << " perplexity=" << fmt_double(r.perplexity)
              << " achieved_batch_size=" << fmt_double(r.achieved_batch_size) << "\n";
}

int cmd_run(const std::string& config_path, const Overrides& overrides,
            const std::string& out_dir_flag, const std::string& mode_flag) {
    eeserve::ExperimentConfig cfg;
    eeserve::ModelRepository repo;
    eeserve::Trace trace;
    try {
        cfg = eeserve::load_experiment_config(config_path, overrides);
        if (!out_dir_flag.empty()) cfg.output_dir = out_dir_flag;
        if (!mode_flag.empty()) cfg.mode = eeserve::mode_spec_from_string(mode_flag);
        repo = eeserve::load_repository(cfg.repository_path);
        trace = materialize_workload(cfg, repo);
        std::size_t tokens = 0;
        for (const auto& req : trace.requests) tokens += req.tokens.size();
        eeserve::log::info("loaded " + std::to_string(repo.models.size()) + " models; workload " +
                           std::to_string(trace.requests.size()) + " requests, " +
                           std::to_string(tokens) + " tokens");
    } catch (const std::exception& e) {
        eeserve::log::error(e.what());
        return 2;
    }
    try {
        const eeserve::SimulationResult res =
            eeserve::simulate(repo, trace, cfg.memory, cfg.policy, cfg.mode, cfg.seed);
        eeserve::log::debug("simulated " + std::to_string(res.events.size()) +
                            " events; writing artifacts to '" + cfg.output_dir + "'");
        const fs::path dir(cfg.output_dir);
        fs::create_directories(dir);
        eeserve::write_event_log(res.events, (dir / "events.jsonl").string());
        eeserve::write_report(res.report, (dir / "report.json").string(), "json");
        eeserve::write_report(res.report, (dir / "report.csv").string(), "csv");
        eeserve::write_memory_timeline(res.report, (dir / "memory_timeline.csv").string());
        std::ofstream rc(dir / "resolved_config.json");
        if (!rc) throw eeserve::ValidationError("cannot write resolved config in '" +
                                                cfg.output_dir + "'");
        rc << eeserve::experiment_config_to_json(cfg).dump(2) << "\n";
        print_summary(res.report);
        return 0;
    } catch (const std::exception& e) {
        eeserve::log::error(e.what());
        return 1;
    }
}

int cmd_gen_trace(const std::string& config_path, const std::string& repo_path,
                  const std::string& out_path, double th, const Overrides& overrides) {
    eeserve::GeneratorConfig gen;
    eeserve::ModelRepository repo;
    try {
        if (!(th > 0.0 && th <= 1.0))
            throw eeserve::ValidationError("--th must be in (0, 1]");
        std::ifstream in(config_path);
        if (!in) throw eeserve::ValidationError("cannot open generator config '" +
                                                config_path + "'");
        Json j = Json::parse(in);
        for (const auto& [key, value] : overrides) eeserve::apply_override(j, key, value);
        gen = eeserve::generator_config_from_json(j);
        repo = eeserve::load_repository(repo_path);
        eeserve::validate_generator_config(gen, repo);
    } catch (const std::exception& e) {
        eeserve::log::error(e.what());
        return 2;
    }
    try {
        const eeserve::Trace trace = eeserve::generate_workload(gen, repo);
        eeserve::write_workload(trace, out_path);
        std::size_t tokens = 0;
        for (const auto& req : trace.requests) tokens += req.tokens.size();
        std::cout << "wrote " << out_path << ": " << trace.requests.size() << " requests, "
                  << tokens << " tokens\n";
        for (const auto& [id, spec] : repo.models) {
            const auto marginals = eeserve::empirical_exit_marginals(trace, id, th);
            if (marginals.empty()) continue;
            std::cout << "exit marginals " << id << " @th=" << th << ":";
            for (const auto& [layer, frac] : marginals) {
                std::ostringstream pct;
                pct.precision(2);
                pct << std::fixed << frac * 100.0;
                std::cout << " " << layer << ":" << pct.str() << "%";
            }
            std::cout << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        eeserve::log::error(e.what());
        return 1;
    }
}

struct SweepJob {
    std::string value;
    std::string mode; // empty = keep the config's own mode
};

int cmd_sweep(const std::string& config_path, const Overrides& base_overrides,
              const std::string& param, const std::string& values_csv,
              const std::string& modes_csv, std::string out_path, int jobs) {
    std::vector<std::string> values;
    std::vector<std::string> modes;
    std::vector<SweepJob> plan;
    try {
        auto split = [](const std::string& s, std::vector<std::string>& out) {
            std::istringstream ss(s);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!item.empty()) out.push_back(item);
        };
        split(values_csv, values);
        if (values.empty()) throw eeserve::ValidationError("--values must list at least one value");
        split(modes_csv, modes);
        if (modes.empty()) modes.push_back("");
        for (const std::string& m : modes)
            if (!m.empty()) eeserve::mode_spec_from_string(m); // reject bad modes up front
        // Fail fast on a broken base config before spawning workers.
        const eeserve::ExperimentConfig base =
            eeserve::load_experiment_config(config_path, base_overrides);
        if (out_path.empty()) out_path = (fs::path(base.output_dir) / "sweep.csv").string();
        for (const std::string& v : values)
            for (const std::string& m : modes) plan.push_back({v, m});
    } catch (const std::exception& e) {
        eeserve::log::error(e.what());
        return 2;
    }

    std::vector<std::string> rows(plan.size());
    std::vector<char> failed(plan.size(), 0);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < plan.size();) {
            const SweepJob& job = plan[i];
            std::string mode_label = job.mode;
            try {
                Overrides ovr = base_overrides;
                ovr.emplace_back(param, job.value);
                eeserve::ExperimentConfig cfg =
                    eeserve::load_experiment_config(config_path, ovr);
                if (!job.mode.empty()) cfg.mode = eeserve::mode_spec_from_string(job.mode);
                mode_label = eeserve::to_string(cfg.mode);
                const eeserve::ModelRepository repo =
                    eeserve::load_repository(cfg.repository_path);
                const eeserve::Trace trace = materialize_workload(cfg, repo);
                const eeserve::SimulationResult res =
                    eeserve::simulate(repo, trace, cfg.memory, cfg.policy, cfg.mode, cfg.seed);
                using eeserve::detail::fmt_double;
                const eeserve::MetricsReport& r = res.report;
                rows[i] = param + "," + job.value + "," + mode_label + "," +
                          fmt_double(r.throughput_tok_s) + "," + fmt_double(r.mean_ttft_s) +
                          "," + fmt_double(r.mean_tpot_s) + "," + fmt_double(r.perplexity) +
                          ",ok";
            } catch (const std::exception& e) {
                eeserve::log::error("sweep " + param + "=" + job.value +
                                    (mode_label.empty() ? "" : " mode=" + mode_label) + ": " +
                                    e.what());
                rows[i] = param + "," + job.value + "," + mode_label + ",,,,,error";
                failed[i] = 1;
            }
        }
    };
    const std::size_t n_threads =
        std::min<std::size_t>(static_cast<std::size_t>(jobs), plan.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t + 1 < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();

    try {
        const fs::path out(out_path);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        std::ofstream f(out);
        if (!f) throw eeserve::ValidationError("cannot write sweep output '" + out_path + "'");
        f << "param,value,mode,throughput_tok_s,mean_ttft_s,mean_tpot_s,perplexity,status\n";
        for (const std::string& row : rows) f << row << "\n";
    } catch (const std::exception& e) {
        eeserve::log::error(e.what());
        return 1;
    }
    std::size_t n_failed = 0;
    for (char c : failed) n_failed += c;
    std::cout << "wrote " << out_path << ": " << plan.size() << " runs, " << n_failed
              << " failed\n";
    return n_failed == 0 ? 0 : 1;
}

int cmd_report(const std::string& events_path, const std::string& out_path,
               const std::string& format, const std::string& timeline_path) {
    eeserve::MetricsReport report;
    try {
        const std::vector<eeserve::Event> events = eeserve::read_event_log(events_path);
        report = eeserve::aggregate(events);
    } catch (const std::exception& e) {
        eeserve::log::error(e.what());
        return 2;
    }
    try {
        eeserve::write_report(report, out_path, format);
        if (!timeline_path.empty()) eeserve::write_memory_timeline(report, timeline_path);
        print_summary(report);
        return 0;
    } catch (const std::exception& e) {
        eeserve::log::error(e.what());
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    Overrides overrides;
    if (!extract_overrides(args, overrides)) return 2;

    CLI::App app{"trace-driven early-exit serving simulator"};
    app.require_subcommand(1);
    app.footer("Config overrides: any --<section>.<key> <value> pair, e.g. --policy.th 0.8");

    std::string run_config, run_out, run_mode;
    CLI::App* run = app.add_subcommand("run", "simulate one experiment and write artifacts");
    run->add_option("config", run_config, "experiment config JSON")
        ->required()
        ->check(CLI::ExistingFile);
    run->add_option("-o,--out", run_out, "output directory (overrides config output_dir)");
    run->add_option("-m,--mode", run_mode,
                    "serving mode override, e.g. helios or ee_single:opt-1.3b");

    std::string gt_config, gt_repo, gt_out;
    double gt_th = 0.7;
    CLI::App* gen = app.add_subcommand("gen-trace", "materialize a synthetic workload");
    gen->add_option("config", gt_config, "generator config JSON")
        ->required()
        ->check(CLI::ExistingFile);
    gen->add_option("--repo", gt_repo, "model repository JSON")
        ->required()
        ->check(CLI::ExistingFile);
    gen->add_option("-o,--out", gt_out, "output workload JSONL path")->required();
    gen->add_option("--th", gt_th, "confidence threshold for the exit marginal summary");

    std::string sw_config, sw_param, sw_values, sw_modes, sw_out;
    int sw_jobs = 1;
    CLI::App* sweep = app.add_subcommand("sweep", "rerun across parameter values and modes");
    sweep->add_option("config", sw_config, "experiment config JSON")
        ->required()
        ->check(CLI::ExistingFile);
    sweep->add_option("--param", sw_param, "dotted config key to vary, e.g. policy.th")
        ->required();
    sweep->add_option("--values", sw_values, "comma-separated values for the key")->required();
    sweep->add_option("--modes", sw_modes,
                      "comma-separated modes, e.g. helios,ee_single:opt-1.3b "
                      "(default: the config's mode)");
    sweep->add_option("-o,--out", sw_out, "sweep CSV path (default <output_dir>/sweep.csv)");
    sweep->add_option("-j,--jobs", sw_jobs, "worker threads")->check(CLI::PositiveNumber);

    std::string rp_events, rp_out, rp_format = "json", rp_timeline;
    CLI::App* rep = app.add_subcommand("report", "re-aggregate an event log");
    rep->add_option("events", rp_events, "event log JSONL")
        ->required()
        ->check(CLI::ExistingFile);
    rep->add_option("-o,--out", rp_out, "report output path")->required();
    rep->add_option("--format", rp_format, "report format")
        ->check(CLI::IsMember({"json", "csv"}));
    rep->add_option("--timeline", rp_timeline, "also write the memory timeline CSV here");

    std::vector<const char*> ptrs;
    ptrs.push_back("eeserve");
    for (const std::string& a : args) ptrs.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(ptrs.size()), ptrs.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (run->parsed()) return cmd_run(run_config, overrides, run_out, run_mode);
    if (gen->parsed()) return cmd_gen_trace(gt_config, gt_repo, gt_out, gt_th, overrides);
    if (sweep->parsed())
        return cmd_sweep(sw_config, overrides, sw_param, sw_values, sw_modes, sw_out, sw_jobs);
    if (rep->parsed()) return cmd_report(rp_events, rp_out, rp_format, rp_timeline);
    return 2;
}
