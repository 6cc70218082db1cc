#include "w2sd/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "w2sd/errors.hpp"
#include "w2sd/rng.hpp"

#ifndef W2SD_GIT_DESCRIBE
#define W2SD_GIT_DESCRIBE "unknown"
#endif

namespace w2sd {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kSnapshotStream = 3;
constexpr std::uint64_t kReportStream = 4;
constexpr std::uint64_t kEvalSplitTag = 0xE7A1;
constexpr std::size_t kTailRows = 10;

const char* kPretrainHeader = "iter,loss,grad_norm,w2_snapshot,mmd_snapshot";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("run.out", "cannot write " + path.string());
  out << content;
}

fs::path prepare_out_dir(const RunConfig& cfg) {
  const fs::path dir(cfg.out);
  if (fs::exists(dir / "config.txt") && !cfg.overwrite)
    throw ConfigError("run.out", "'" + cfg.out + "' already holds a run (set run.overwrite = true)");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("run.out", "cannot create '" + cfg.out + "': " + ec.message());
  write_file(dir / "config.txt", serialize_config(cfg));
  return dir;
}

Dataset eval_dataset(const RunConfig& cfg) {
  DatasetSpec spec = cfg.dataset;
  spec.seed = mix_seed(spec.seed ^ kEvalSplitTag, cfg.eval.seed);
  return Dataset(spec);
}

DataBatch eval_ground_truth(const Dataset& data, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i % data.spec().size;
  return data.batch(idx);
}

MetricOptions metric_options(const RunConfig& cfg) {
  return MetricOptions{cfg.eval.projections, cfg.eval.projection_seed, true};
}

ParamVector load_params(const MlpNet& net, const Checkpoint& ckpt, const std::string& prefix,
                        const char* field) {
  ParamVector params = net.make_params(prefix);
  try {
    ckpt.restore(params);
  } catch (const std::exception& e) {
    throw ConfigError(field, std::string("checkpoint does not match the configured network: ") +
                                 e.what());
  }
  return params;
}

Checkpoint load_checkpoint(const std::string& path, const char* field) {
  try {
    return Checkpoint::load(path);
  } catch (const std::exception& e) {
    throw ConfigError(field, e.what());
  }
}

bool has_prefix(const Checkpoint& ckpt, std::string_view prefix) {
  return std::any_of(ckpt.tensors().begin(), ckpt.tensors().end(),
                     [&](const NamedTensor& t) { return t.name.starts_with(prefix); });
}

/// Samples `n` outputs conditioned like `gt` from whatever `ckpt` holds.
Matrix sample_checkpoint(const RunConfig& cfg, const MlpNet& net, const Checkpoint& ckpt,
                         const DataBatch& gt, Rng& rng) {
  const auto n = gt.x.rows();
  const auto dim = static_cast<Eigen::Index>(net.config().sample_dim);
  const Matrix noise = rng.normal_matrix(n, dim);
  if (has_prefix(ckpt, "gen/")) {
    const ParamVector g = load_params(net, ckpt, "gen/", "eval.checkpoint");
    std::vector<double> steps = cfg.schedule;
    if (ckpt.contains("meta/schedule")) steps = ckpt.get("meta/schedule").data;
    return few_step_sample(bind_net(net, g), TimestepSchedule(steps), noise, rng, gt.cond_ptr());
  }
  if (has_prefix(ckpt, "teacher/")) {
    const ParamVector p = load_params(net, ckpt, "teacher/", "eval.checkpoint");
    return euler_sample(bind_net(net, p), TimestepSchedule::uniform(cfg.pretrain.sample_steps),
                        noise, gt.cond_ptr());
  }
  throw ConfigError("eval.checkpoint", "holds neither generator nor teacher parameters");
}

/// Appends metric rows to metrics.csv and remembers the last few.
class MetricsWriter {
 public:
  MetricsWriter(const fs::path& path, const char* header) : out_(path, std::ios::binary) {
    if (!out_) throw ConfigError("run.out", "cannot write " + path.string());
    out_ << header << "\n";
  }

  void write(const std::string& row) {
    out_ << row << "\n";
    out_.flush();
    tail_.push_back(row);
    if (tail_.size() > kTailRows) tail_.erase(tail_.begin());
  }

  const std::vector<std::string>& tail() const { return tail_; }

 private:
  std::ofstream out_;
  std::vector<std::string> tail_;
};

/// Periodic sliced-W2 / MMD snapshots on a fixed evaluation set.
class Snapshotter {
 public:
  Snapshotter(const RunConfig& cfg)
      : cfg_(cfg),
        data_(eval_dataset(cfg)),
        gt_(eval_ground_truth(data_, cfg.eval.snapshot_samples)) {}

  bool due(std::size_t completed) const {
    return cfg_.eval.interval > 0 && completed % cfg_.eval.interval == 0;
  }

  MetricReport measure(const std::function<Matrix(const Matrix&, Rng&)>& sampler) const {
    Rng rng(mix_seed(cfg_.seed, kSnapshotStream));
    const Matrix noise = rng.normal_matrix(gt_.x.rows(), gt_.x.cols());
    return evaluate_samples(data_, sampler(noise, rng), gt_.x, metric_options(cfg_));
  }

  const DataBatch& ground_truth() const { return gt_; }

 private:
  const RunConfig& cfg_;
  Dataset data_;
  DataBatch gt_;
};

void save_generator(const fs::path& path, const DistillState& st, std::span<const double> steps) {
  Checkpoint ckpt;
  ckpt.add(st.generator());
  ckpt.add(st.branch().factors());
  ckpt.add(st.disc());
  ckpt.add_scalars("meta/iteration", {static_cast<double>(st.iteration)});
  ckpt.add_scalars("meta/schedule", std::vector<double>(steps.begin(), steps.end()));
  ckpt.save(path);
}

std::string checkpoint_name(std::size_t iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06zu.w2sd", iteration);
  return buf;
}

void write_report(const fs::path& dir, const RunConfig& cfg, const MetricReport& report,
                  bool collapse_flag, std::ostream& log) {
  const std::string json = report_json(report, config_hash(cfg), git_describe(), collapse_flag);
  write_file(dir / "report.json", json + "\n");
  log << json << "\n";
}

// ---------------------------------------------------------------------------

int run_pretrain(const RunConfig& cfg, std::ostream& log) {
  const fs::path dir = prepare_out_dir(cfg);
  const MlpNet net(cfg.net_config());
  const Dataset data(cfg.dataset);
  Rng init(mix_seed(cfg.seed, kInitStream));
  Rng rng(mix_seed(cfg.seed, kTrainStream));
  ParamVector params = net.init_params(init, "teacher/");
  AdamState opt(params.size(), AdamConfig{cfg.pretrain.lr, cfg.adam.beta1, cfg.adam.beta2,
                                          cfg.adam.eps});
  const auto sampler = TimestepSampler::logit_normal(cfg.logit_mean, cfg.logit_std);
  const auto euler = TimestepSchedule::uniform(cfg.pretrain.sample_steps);
  Snapshotter snap(cfg);
  MetricsWriter metrics(dir / "metrics.csv", kPretrainHeader);
  const auto total = cfg.pretrain.iterations;

  for (std::size_t i = 0; i < total; ++i) {
    if (cfg.pretrain.cosine_decay)
      opt.set_lr(cfg.pretrain.lr * 0.5 *
                 (1.0 + std::cos(M_PI * static_cast<double>(i) / static_cast<double>(total))));
    const auto batch = data.sample_batch(cfg.pretrain.batch_size, rng);
    const auto lg = flow_matching_loss(net, params, batch.x, batch.cond_ptr(), sampler, rng);
    if (!std::isfinite(lg.loss))
      throw NonFiniteError(static_cast<long>(i), "l_flow", "grad_norm=" + fmt(lg.grad.norm()));
    opt.step(params, lg.grad, "l_flow", static_cast<long>(i));
    std::string row = std::to_string(i) + "," + fmt(lg.loss) + "," + fmt(lg.grad.norm()) + ",";
    if (snap.due(i + 1)) {
      const auto r = snap.measure([&](const Matrix& noise, Rng&) {
        return euler_sample(bind_net(net, params), euler, noise, snap.ground_truth().cond_ptr());
      });
      row += fmt(r.w2) + "," + fmt(r.mmd);
    } else {
      row += ",";
    }
    metrics.write(row);
    if (cfg.checkpoint_interval > 0 && (i + 1) % cfg.checkpoint_interval == 0 && i + 1 < total) {
      Checkpoint ckpt;
      ckpt.add(params);
      ckpt.add_scalars("meta/iteration", {static_cast<double>(i + 1)});
      ckpt.save(dir / checkpoint_name(i + 1));
    }
  }
  Checkpoint ckpt;
  ckpt.add(params);
  ckpt.add_scalars("meta/iteration", {static_cast<double>(total)});
  ckpt.save(dir / "teacher.w2sd");
  write_report(dir, cfg, evaluate_checkpoint(cfg, ckpt), false, log);
  return kExitOk;
}

/// Shared body of the two distillation modes and the one-step curriculum.
int run_distill(const RunConfig& cfg, std::ostream& log) {
  const bool one_step = cfg.mode == RunMode::TrainOneStep;
  const MlpNet net(cfg.net_config());
  const Checkpoint teacher_ckpt =
      load_checkpoint(cfg.distill.teacher_checkpoint, "distill.teacher_checkpoint");
  const ParamVector teacher =
      load_params(net, teacher_ckpt, "teacher/", "distill.teacher_checkpoint");
  std::optional<PairTeacher> student;
  if (one_step) {
    const Checkpoint sc =
        load_checkpoint(cfg.onestep.student_checkpoint, "onestep.student_checkpoint");
    if (!has_prefix(sc, "gen/"))
      throw ConfigError("onestep.student_checkpoint", "holds no generator parameters");
    std::vector<double> steps = cfg.schedule;
    if (sc.contains("meta/schedule")) steps = sc.get("meta/schedule").data;
    student = PairTeacher{load_params(net, sc, "gen/", "onestep.student_checkpoint"),
                          TimestepSchedule(steps), cfg.onestep.pair_renoise};
  }
  const std::vector<double> steps = one_step ? std::vector<double>{1000.0} : cfg.schedule;
  const fs::path dir = prepare_out_dir(cfg);
  const Dataset data(cfg.dataset);
  Rng init(mix_seed(cfg.seed, kInitStream));
  Rng rng(mix_seed(cfg.seed, kTrainStream));
  DistillState state(net, teacher, cfg.distill_config(steps), init);
  const TimestepSchedule schedule(steps);

  Snapshotter snap(cfg);
  MetricsWriter metrics(dir / "metrics.csv", kMetricsHeader);
  CollapseMonitor monitor(cfg.collapse.threshold, cfg.collapse.patience);
  const std::size_t total = one_step ? cfg.onestep.iterations : cfg.distill.iterations;

  const auto set_lr = [&](std::size_t i) {
    const double frac = total > 1 ? static_cast<double>(i) / static_cast<double>(total - 1) : 1.0;
    const double factor = 1.0 - (1.0 - cfg.distill.generator_lr_final) * frac;
    state.generator_opt().set_lr(cfg.distill.generator_lr * factor);
  };
  const auto observe = [&](DistillState& st, RunMetrics& row) {
    const auto done = static_cast<std::size_t>(st.iteration);
    if (snap.due(done)) {
      const auto r = snap.measure([&](const Matrix& noise, Rng& r) {
        return few_step_sample(bind_net(net, st.generator()), schedule, noise, r,
                               snap.ground_truth().cond_ptr());
      });
      row.w2_snapshot = r.w2;
      row.mmd_snapshot = r.mmd;
      monitor.observe(r.w2);
    }
    metrics.write(metrics_csv_row(row));
    if (cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done < total)
      save_generator(dir / checkpoint_name(done), st, steps);
    if (monitor.fired() && cfg.collapse.fatal) {
      save_generator(dir / "generator.w2sd", st, steps);
      throw CollapseAbort(row.iter, metrics.tail());
    }
    if (done < total) set_lr(done);
  };

  set_lr(0);
  std::vector<CurriculumPoint> trace;
  try {
    if (one_step) {
      trace = one_step_curriculum(state, *student, cfg.curriculum, total, data, rng, observe);
    } else {
      for (std::size_t i = 0; i < total; ++i) {
        RunMetrics row = train_step(state, data, rng);
        observe(state, row);
      }
    }
  } catch (const CollapseAbort&) {
    Checkpoint ckpt = Checkpoint::load(dir / "generator.w2sd");
    write_report(dir, cfg, evaluate_checkpoint(cfg, ckpt), true, log);
    throw;
  }

  if (one_step) {
    std::ofstream cur(dir / "curriculum.csv", std::ios::binary);
    cur << "iter,w_distill,w_dmd,l_distill\n";
    for (const auto& p : trace)
      cur << p.iter << "," << fmt(p.w_distill) << "," << fmt(p.w_dmd) << "," << fmt(p.l_distill)
          << "\n";
  }
  save_generator(dir / "generator.w2sd", state, steps);
  const Checkpoint ckpt = Checkpoint::load(dir / "generator.w2sd");
  write_report(dir, cfg, evaluate_checkpoint(cfg, ckpt), monitor.fired(), log);
  return kExitOk;
}

int run_eval(const RunConfig& cfg, std::ostream& log) {
  const Checkpoint ckpt = load_checkpoint(cfg.eval.checkpoint, "eval.checkpoint");
  const auto report = evaluate_checkpoint(cfg, ckpt);
  const fs::path dir = prepare_out_dir(cfg);
  write_report(dir, cfg, report, false, log);
  return kExitOk;
}

int run_prop1(const RunConfig& cfg, std::ostream& log) {
  const fs::path dir = prepare_out_dir(cfg);
  const Prop1Problem problem{cfg.prop1.hidden, cfg.prop1.batch, cfg.prop1.seed, LoraMode::Output};
  std::ostringstream csv;
  csv << "alpha_weak,alpha_strong,scale_factor,max_abs_deviation,realization_error\n";
  bool ok = true;
  for (double as : cfg.prop1.alpha_strong) {
    for (double aw : cfg.prop1.alpha_weak) {
      if (aw > as) continue;
      const auto r = verify_prop1(problem, aw, as);
      const bool pass = r.max_abs_deviation <= cfg.prop1.tolerance;
      ok = ok && pass;
      char line[256];
      std::snprintf(line, sizeof(line),
                    "alpha_weak=%-5g alpha_strong=%-4g scale_factor=%-10.8g "
                    "max_abs_deviation=%.3e realization_error=%.3e %s\n",
                    aw, as, r.scale_factor, r.max_abs_deviation, r.realization_error,
                    pass ? "ok" : "FAIL");
      log << line;
      csv << fmt(aw) << "," << fmt(as) << "," << fmt(r.scale_factor) << ","
          << fmt(r.max_abs_deviation) << "," << fmt(r.realization_error) << "\n";
    }
  }
  write_file(dir / "prop1.csv", csv.str());
  return ok ? kExitOk : kExitCheckFailed;
}

int run_gradcheck(const RunConfig& cfg, std::ostream& log) {
  const fs::path dir = prepare_out_dir(cfg);
  const auto errors = gradcheck_suite(cfg.gradcheck.probes, cfg.gradcheck.h, cfg.gradcheck.seed);
  std::ostringstream csv;
  csv << "loss,max_rel_error\n";
  bool ok = true;
  for (const auto& [name, err] : errors) {
    const bool pass = err <= cfg.gradcheck.tolerance;
    ok = ok && pass;
    char line[128];
    std::snprintf(line, sizeof(line), "%-12s max_rel_error=%.3e %s\n", name.c_str(), err,
                  pass ? "ok" : "FAIL");
    log << line;
    csv << name << "," << fmt(err) << "\n";
  }
  write_file(dir / "gradcheck.csv", csv.str());
  return ok ? kExitOk : kExitCheckFailed;
}

int run_compare(const RunConfig& cfg, std::ostream& log) {
  if (cfg.compare_inputs.empty()) throw ConfigError("compare.inputs", "no metrics files given");
  std::vector<fs::path> paths(cfg.compare_inputs.begin(), cfg.compare_inputs.end());
  const auto cmp = compare_runs(paths);
  const fs::path dir = prepare_out_dir(cfg);
  write_file(dir / "comparison.txt", cmp.text);
  write_file(dir / "comparison.csv", cmp.table_csv);
  write_file(dir / "summary.csv", cmp.summary_csv);
  log << cmp.text;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// comparison helpers

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> cell_value(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size() + 1, ' ');
}

std::string render(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], r[c].size());
    }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) line += pad(r[c], width[c]);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

}  // namespace

CollapseAbort::CollapseAbort(long iteration, std::vector<std::string> tail)
    : std::runtime_error("collapse monitor fired at iteration " + std::to_string(iteration)),
      iteration_(iteration),
      tail_(std::move(tail)) {}

const char* git_describe() { return W2SD_GIT_DESCRIBE; }

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw ConfigError("compare.inputs", "missing column " + std::string(name));
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("compare.inputs", "cannot read " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("compare.inputs", path.string() + " is empty");
  table.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != table.header.size())
      throw ConfigError("compare.inputs", path.string() + ": row with " +
                                              std::to_string(cells.size()) + " cells");
    table.rows.push_back(std::move(cells));
  }
  return table;
}

Comparison compare_runs(const std::vector<fs::path>& csvs) {
  if (csvs.empty()) throw ConfigError("compare.inputs", "no metrics files given");
  struct Run {
    std::string label;
    CsvTable table;
    std::optional<RunConfig> config;
  };
  std::vector<Run> runs;
  std::map<std::string, int> label_count;
  for (const auto& p : csvs) {
    Run r;
    r.table = read_csv(p);
    if (!runs.empty() && r.table.header != runs.front().table.header)
      throw ConfigError("compare.inputs", p.string() + " has a different header than " +
                                              csvs.front().string());
    if (r.table.header.empty() || r.table.header.front() != "iter")
      throw ConfigError("compare.inputs", p.string() + " does not start with an iter column");
    const fs::path parent = fs::absolute(p).parent_path();
    std::string label = parent.filename().string();
    if (label.empty()) label = p.stem().string();
    if (const int n = label_count[label]++; n > 0) label += "#" + std::to_string(n + 1);
    r.label = label;
    if (fs::exists(parent / "config.txt")) r.config = load_config(parent / "config.txt");
    runs.push_back(std::move(r));
  }

  const auto& header = runs.front().table.header;
  const std::size_t metrics = header.size() - 1;
  const auto has_w2 = std::find(header.begin(), header.end(), "w2_snapshot") != header.end();

  // Per-iteration table keyed by iter.
  std::map<long, std::vector<const std::vector<std::string>*>> by_iter;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    for (const auto& row : runs[k].table.rows) {
      auto& slot = by_iter[std::stol(row.front())];
      slot.resize(runs.size(), nullptr);
      slot[k] = &row;
    }
  }

  std::ostringstream table_csv;
  table_csv << "iter";
  for (const auto& r : runs)
    for (std::size_t m = 1; m <= metrics; ++m) table_csv << "," << r.label << ":" << header[m];
  for (std::size_t k = 1; k < runs.size(); ++k)
    for (std::size_t m = 1; m <= metrics; ++m)
      table_csv << ",delta_" << runs[k].label << ":" << header[m];
  table_csv << "\n";
  const auto value_at = [](const std::vector<std::string>* row, std::size_t m) {
    return row ? (*row)[m] : std::string();
  };
  for (const auto& [iter, rows] : by_iter) {
    table_csv << iter;
    for (std::size_t k = 0; k < runs.size(); ++k)
      for (std::size_t m = 1; m <= metrics; ++m) table_csv << "," << value_at(rows[k], m);
    for (std::size_t k = 1; k < runs.size(); ++k)
      for (std::size_t m = 1; m <= metrics; ++m) {
        const auto a = cell_value(value_at(rows[0], m));
        const auto b = cell_value(value_at(rows[k], m));
        table_csv << ",";
        if (a && b) table_csv << fmt(*b - *a);
      }
    table_csv << "\n";
  }

  // Summary: final values, best snapshot and collapse flag per run.
  std::vector<std::vector<std::string>> summary;
  std::vector<std::string> head{"run", "alpha_weak", "rows"};
  for (std::size_t m = 1; m <= metrics; ++m) head.push_back("final_" + header[m]);
  if (has_w2) {
    head.push_back("best_w2");
    head.push_back("collapse");
  }
  summary.push_back(head);
  for (const auto& r : runs) {
    std::vector<std::string> line{r.label, r.config ? fmt(r.config->views.alpha_weak) : "-",
                                  std::to_string(r.table.rows.size())};
    for (std::size_t m = 1; m <= metrics; ++m) {
      std::string last;
      for (const auto& row : r.table.rows)
        if (!row[m].empty()) last = row[m];
      line.push_back(last);
    }
    if (has_w2) {
      const CollapseSettings cs = r.config ? r.config->collapse : CollapseSettings{};
      CollapseMonitor monitor(cs.threshold, cs.patience);
      const std::size_t w2 = r.table.column("w2_snapshot");
      bool any = false;
      for (const auto& row : r.table.rows)
        if (const auto v = cell_value(row[w2])) {
          monitor.observe(*v);
          any = true;
        }
      line.push_back(any ? fmt(monitor.best()) : "");
      line.push_back(monitor.fired() ? "yes" : "no");
    }
    summary.push_back(line);
  }

  std::ostringstream summary_csv;
  for (const auto& line : summary) {
    for (std::size_t c = 0; c < line.size(); ++c) summary_csv << (c ? "," : "") << line[c];
    summary_csv << "\n";
  }

  // Text view: the summary, then the rows that carry snapshots (all rows otherwise).
  std::vector<std::vector<std::string>> iter_rows;
  std::vector<std::size_t> shown;
  for (const char* name : {"l_dmd", "l_diff", "w2_snapshot", "loss"}) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it != header.end()) shown.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  std::vector<std::string> ih{"iter"};
  for (const auto& r : runs)
    for (auto m : shown) ih.push_back(r.label + ":" + header[m]);
  iter_rows.push_back(ih);
  for (const auto& [iter, rows] : by_iter) {
    if (has_w2) {
      const std::size_t w2 = runs.front().table.column("w2_snapshot");
      const bool snap = std::any_of(rows.begin(), rows.end(), [&](auto* row) {
        return row && !(*row)[w2].empty();
      });
      if (!snap) continue;
    }
    std::vector<std::string> line{std::to_string(iter)};
    for (std::size_t k = 0; k < runs.size(); ++k)
      for (auto m : shown) line.push_back(value_at(rows[k], m));
    iter_rows.push_back(line);
  }

  Comparison out;
  out.text = render(summary) + "\n" + render(iter_rows);
  out.table_csv = table_csv.str();
  out.summary_csv = summary_csv.str();
  return out;
}

MetricReport evaluate_checkpoint(const RunConfig& cfg, const Checkpoint& ckpt) {
  const MlpNet net(cfg.net_config());
  const Dataset data = eval_dataset(cfg);
  const DataBatch gt = eval_ground_truth(data, cfg.eval.samples);
  Rng rng(mix_seed(cfg.seed, kReportStream));
  const Matrix samples = sample_checkpoint(cfg, net, ckpt, gt, rng);
  return evaluate_samples(data, samples, gt.x, metric_options(cfg));
}

std::string error_record(std::string_view kind, std::string_view field, std::string_view message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  if (!field.empty()) j["field"] = field;
  j["message"] = message;
  return j.dump();
}

int run(const RunConfig& input, std::ostream& log) {
  const RunConfig cfg = input.effective();
  cfg.validate();
  switch (cfg.mode) {
    case RunMode::Pretrain:
      return run_pretrain(cfg, log);
    case RunMode::DistillW2svd:
    case RunMode::DistillVanillaDmd:
    case RunMode::TrainOneStep:
      return run_distill(cfg, log);
    case RunMode::Eval:
      return run_eval(cfg, log);
    case RunMode::VerifyProp1:
      return run_prop1(cfg, log);
    case RunMode::Gradcheck:
      return run_gradcheck(cfg, log);
    case RunMode::Compare:
      return run_compare(cfg, log);
  }
  return kExitInternal;
}

int run_guarded(const RunConfig& config, std::ostream& log, std::ostream& err) {
  const auto emit = [&](const std::string& record) {
    err << record << "\n";
    const fs::path dir(config.out);
    std::error_code ec;
    if (!config.out.empty() && fs::is_directory(dir, ec)) {
      std::ofstream out(dir / "error.json", std::ios::binary);
      out << record << "\n";
    }
  };
  try {
    return run(config, log);
  } catch (const ConfigError& e) {
    err << error_record("config", e.field(), e.what()) << "\n";
    return kExitConfig;
  } catch (const CollapseAbort& e) {
    nlohmann::ordered_json j;
    j["error"] = "collapse";
    j["iteration"] = e.iteration();
    j["message"] = e.what();
    j["telemetry_header"] = kMetricsHeader;
    j["telemetry_tail"] = e.tail();
    emit(j.dump());
    return kExitCollapse;
  } catch (const NonFiniteError& e) {
    nlohmann::ordered_json j;
    j["error"] = "non-finite";
    j["iteration"] = e.iteration();
    j["loss"] = e.loss_name();
    j["message"] = e.what();
    emit(j.dump());
    return kExitNonFinite;
  } catch (const std::exception& e) {
    emit(error_record("internal", "", e.what()));
    return kExitInternal;
  }
}

}  // namespace w2sd
