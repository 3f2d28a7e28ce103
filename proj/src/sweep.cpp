// SPDX-License-Identifier: Apache-2.0
#include "neo/sweep.hpp"

#include <fstream>

#include "json.hpp"

namespace neo {

using nlohmann::json;

std::string format_double(double v) { return json(v).dump(); }

std::vector<CellSpec> build_cell_specs(const AppConfig& base) {
    std::vector<CellSpec> cells;
    for (int64_t rank : base.sweep.ranks) {
        for (double lr : base.sweep.lrs) {
            for (int64_t rep = 0; rep < base.sweep.repeats; ++rep) {
                CellSpec spec;
                spec.rank = rank;
                spec.lr = lr;
                spec.repeat = rep;
                spec.seed = base.train.seed + static_cast<uint64_t>(rep);
                spec.fingerprint = config_fingerprint(cell_config(base, spec));
                cells.push_back(std::move(spec));
            }
        }
    }
    return cells;
}

void write_sweep_plan(const std::string& out_dir, const AppConfig& base,
                      const std::vector<CellSpec>& cells) {
    json jcells = json::array();
    for (const auto& c : cells) {
        jcells.push_back({{"rank", c.rank},
                          {"lr", c.lr},
                          {"repeat", c.repeat},
                          {"seed", c.seed},
                          {"fingerprint", c.fingerprint}});
        // each cell's full config is serialized before any run starts
        const fs::path cell_dir = fs::path(out_dir) / "cells" / c.fingerprint;
        fs::create_directories(cell_dir);
        std::ofstream cf(cell_dir / "config.json");
        cf << config_to_json(cell_config(base, c)) << "\n";
    }
    json plan{{"ranks", base.sweep.ranks},
              {"lrs", base.sweep.lrs},
              {"repeats", base.sweep.repeats},
              {"base", json::parse(config_to_json(base))},
              {"cells", jcells}};
    std::ofstream f(fs::path(out_dir) / "plan.json");
    if (!f) throw DataError("cannot write sweep plan in " + out_dir);
    f << plan.dump(2) << "\n";
}

void write_cell_result(const std::string& cell_dir, const CellSpec& spec, const CellResult& result) {
    fs::create_directories(cell_dir);
    json j{{"status", result.status}, {"rank", spec.rank},           {"lr", spec.lr},
           {"repeat", spec.repeat},   {"seed", spec.seed},           {"score", result.score},
           {"val_loss", result.val_loss}, {"probe_avg", result.probe_avg}, {"error", result.error}};
    std::ofstream f(fs::path(cell_dir) / "result.json");
    if (!f) throw DataError("cannot write cell result in " + cell_dir);
    f << j.dump(2) << "\n";
}

std::optional<CellResult> read_cell_result(const std::string& cell_dir) {
    std::ifstream f(fs::path(cell_dir) / "result.json");
    if (!f) return std::nullopt;
    json j;
    try {
        f >> j;
    } catch (const json::exception&) {
        return std::nullopt; // a torn write counts as incomplete
    }
    // NaN fields round-trip as JSON null
    auto num = [&j](const char* key) {
        return j.contains(key) && j.at(key).is_number()
                   ? j.at(key).get<double>()
                   : std::numeric_limits<double>::quiet_NaN();
    };
    CellResult r;
    r.status = j.value("status", std::string("failed"));
    r.score = num("score");
    r.val_loss = num("val_loss");
    r.probe_avg = num("probe_avg");
    r.error = j.value("error", std::string());
    return r;
}

ScoreMatrix regenerate_matrix(const std::string& out_dir) {
    std::ifstream pf(fs::path(out_dir) / "plan.json");
    if (!pf) throw DataError("no sweep plan in " + out_dir);
    json plan;
    try {
        pf >> plan;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed sweep plan: ") + e.what());
    }

    ScoreMatrix m;
    m.ranks = plan.at("ranks").get<std::vector<int64_t>>();
    m.lrs = plan.at("lrs").get<std::vector<double>>();
    const size_t n_cells = m.ranks.size() * m.lrs.size();
    m.values.assign(n_cells, std::numeric_limits<double>::quiet_NaN());
    m.raw.assign(n_cells, {});
    m.incomplete.assign(n_cells, 0);

    for (const auto& jc : plan.at("cells")) {
        const int64_t rank = jc.at("rank").get<int64_t>();
        const double lr = jc.at("lr").get<double>();
        const std::string fp = jc.at("fingerprint").get<std::string>();
        size_t ri = 0, li = 0;
        while (ri < m.ranks.size() && m.ranks[ri] != rank) ++ri;
        while (li < m.lrs.size() && m.lrs[li] != lr) ++li;
        const size_t idx = ri * m.lrs.size() + li;
        const auto result = read_cell_result((fs::path(out_dir) / "cells" / fp).string());
        if (result && result->status == "complete") {
            m.raw[idx].push_back(result->score);
        } else {
            m.incomplete[idx] = 1;
        }
    }
    for (size_t i = 0; i < n_cells; ++i) {
        if (m.incomplete[i] || m.raw[i].empty()) {
            m.incomplete[i] = 1;
            continue;
        }
        double total = 0;
        for (double v : m.raw[i]) total += v;
        m.values[i] = total / static_cast<double>(m.raw[i].size());
    }

    // matrix.csv: lr columns across, rank rows down
    {
        std::ofstream csv(fs::path(out_dir) / "matrix.csv");
        csv << "rank\\lr";
        for (double lr : m.lrs) csv << "," << format_double(lr);
        csv << "\n";
        for (size_t ri = 0; ri < m.ranks.size(); ++ri) {
            csv << m.ranks[ri];
            for (size_t li = 0; li < m.lrs.size(); ++li) {
                const size_t idx = ri * m.lrs.size() + li;
                csv << ",";
                if (m.incomplete[idx]) {
                    csv << "incomplete";
                } else {
                    csv << format_double(m.values[idx]);
                }
            }
            csv << "\n";
        }
    }
    {
        json j{{"ranks", m.ranks},
               {"lrs", m.lrs},
               {"values", m.values},
               {"raw", m.raw},
               {"incomplete", m.incomplete}};
        std::ofstream jf(fs::path(out_dir) / "matrix.json");
        jf << j.dump(2) << "\n";
    }
    return m;
}

void write_scaling_report(const std::string& out_dir, const std::vector<ScalingRow>& rows) {
    json jrows = json::array();
    for (const auto& r : rows) {
        jrows.push_back({{"target_tokens", r.target_tokens},
                         {"slice_bytes", r.slice_bytes},
                         {"slice_tokens", r.slice_tokens},
                         {"steps", r.steps},
                         {"val_loss", r.val_loss},
                         {"probe_avg", r.probe_avg}});
    }
    std::ofstream jf(fs::path(out_dir) / "scaling.json");
    jf << json{{"rows", jrows}}.dump(2) << "\n";

    std::ofstream csv(fs::path(out_dir) / "scaling.csv");
    csv << "target_tokens,slice_bytes,slice_tokens,steps,val_loss,probe_avg\n";
    for (const auto& r : rows) {
        csv << r.target_tokens << "," << r.slice_bytes << "," << r.slice_tokens << "," << r.steps
            << "," << format_double(r.val_loss) << "," << format_double(r.probe_avg) << "\n";
    }
}

void write_compare_report(const std::string& out_dir, const CompareReport& rep) {
    json jrows = json::array();
    for (const auto& r : rep.rows) {
        jrows.push_back({{"method", r.method},
                         {"mean_val_loss", r.mean_val_loss},
                         {"mean_probe_avg", r.mean_probe_avg},
                         {"val_losses", r.val_losses},
                         {"trainable_params", r.trainable_params},
                         {"optimizer_state_scalars", r.optimizer_state_scalars},
                         {"mean_wall_seconds", r.mean_wall_seconds}});
    }
    std::ofstream jf(fs::path(out_dir) / "compare.json");
    jf << json{{"rows", jrows},
               {"epsilon", rep.epsilon},
               {"neo_le_lora", rep.neo_le_lora},
               {"kd_le_sft", rep.kd_le_sft},
               {"flags", rep.flags}}
              .dump(2)
       << "\n";

    std::ofstream csv(fs::path(out_dir) / "compare.csv");
    csv << "method,mean_val_loss,mean_probe_avg,trainable_params,optimizer_state_scalars,"
           "mean_wall_seconds\n";
    for (const auto& r : rep.rows) {
        csv << r.method << "," << format_double(r.mean_val_loss) << ","
            << format_double(r.mean_probe_avg) << "," << r.trainable_params << ","
            << r.optimizer_state_scalars << "," << format_double(r.mean_wall_seconds) << "\n";
    }
}

int64_t bytes_for_token_target(const std::string& corpus_path, int64_t start,
                               int64_t target_tokens) {
    if (target_tokens <= 0) throw ConfigError("token target must be positive");
    std::ifstream f(corpus_path, std::ios::binary);
    if (!f) throw DataError("corpus file not found: " + corpus_path);
    f.seekg(start);
    int64_t tokens = 0;
    int64_t offset = start;
    std::string line;
    while (tokens < target_tokens && std::getline(f, line)) {
        const bool had_newline = !f.eof();
        const int64_t line_bytes = static_cast<int64_t>(line.size()) + (had_newline ? 1 : 0);
        tokens += line_bytes + 2; // bos + bytes + eos
        offset += line_bytes;
    }
    if (tokens < target_tokens) {
        throw DataError("corpus " + corpus_path + " has only " + std::to_string(tokens) +
                        " tokens after offset " + std::to_string(start) + ", need " +
                        std::to_string(target_tokens));
    }
    return offset;
}

} // namespace neo
