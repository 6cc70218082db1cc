// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//
//   acceptance <work-dir>
//
// Runs go through w2sd::run() with the configurations in tools/configs,
// rewritten to live under <work-dir>.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "w2sd/config.hpp"
#include "w2sd/distill.hpp"
#include "w2sd/errors.hpp"
#include "w2sd/run.hpp"

namespace fs = std::filesystem;
using namespace w2sd;

namespace {

// Tolerances and limits.
constexpr double kGradTol = 1e-5;
constexpr double kGradSeconds = 60.0;
constexpr double kProp1Tol = 1e-10;
constexpr double kProp1Seconds = 10.0;
constexpr double kDefaultScale = 0.5625;
constexpr std::size_t kReductionIters = 200;
constexpr double kTeacherW2 = 0.10;
constexpr double kStudentRatio = 1.5;
constexpr double kStudentCoverage = 7.0 / 8.0;
constexpr std::size_t kStudentIters = 3000;
constexpr double kE2eSeconds = 15.0 * 60.0;
constexpr std::size_t kStressIters = 1500;
constexpr double kOneStepRatio = 3.0;

fs::path g_work;
std::ofstream g_log;
std::map<int, std::string> g_lines;
int g_failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  char head[64];
  std::snprintf(head, sizeof(head), "criterion %d %-22s %s  ", id, name.c_str(),
                pass ? "PASS" : "FAIL");
  g_lines[id] = head + detail;
  g_log << g_lines[id] << std::endl;
  if (!pass) ++g_failures;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

RunConfig load(const std::string& name, RunMode mode) {
  RunConfig c = load_config(fs::path(W2SD_CONFIG_DIR) / name);
  c.mode = mode;
  return c;
}

fs::path under(const std::string& rel) { return g_work / rel; }

int execute(RunConfig c, const std::string& out) {
  c.out = under(out).string();
  g_log << "== " << to_string(c.mode) << " -> " << c.out << std::endl;
  std::ostringstream err;
  const int rc = run_guarded(c, g_log, err);
  g_log << err.str() << std::flush;
  return rc;
}

nlohmann::json read_report(const std::string& out) {
  std::ifstream f(under(out) / "report.json");
  return nlohmann::json::parse(f);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : gradcheck_suite(200, 1e-5, 5))
    if (err >= worst) worst = err, worst_name = name;
  const double secs = seconds_since(t0);
  report(1, "gradient-suite", worst <= kGradTol && secs < kGradSeconds,
         "max_rel_err=" + num(worst) + " (" + worst_name + ", tol " + num(kGradTol) + ") " +
             num(secs) + "s");
}

void prop1_grid() {
  const auto t0 = std::chrono::steady_clock::now();
  const Prop1Settings grid;
  double worst = 0.0, default_scale = NAN;
  std::size_t cases = 0;
  for (double as : grid.alpha_strong)
    for (double aw : grid.alpha_weak) {
      if (aw > as) continue;
      const auto r = verify_prop1(Prop1Problem{}, aw, as);
      worst = std::max(worst, r.max_abs_deviation);
      if (aw == 0.25 && as == 1.0) default_scale = r.scale_factor;
      ++cases;
    }
  const double secs = seconds_since(t0);
  report(2, "proposition-1", worst <= kProp1Tol && default_scale == kDefaultScale &&
                                 secs < kProp1Seconds,
         std::to_string(cases) + " cases max_dev=" + num(worst) + " scale(0.25,1)=" +
             num(default_scale) + " " + num(secs) + "s");
}

void reduction(const std::string& teacher) {
  RunConfig w = load("gm8_w2svd.txt", RunMode::DistillW2svd);
  w.distill.teacher_checkpoint = teacher;
  w.distill.iterations = kReductionIters;
  w.eval.interval = 50;
  w.views.alpha_weak = 0.0;
  w.weights.reg_enabled = false;
  w.weights.reg = 0.0;
  w.weights.normalizer_enabled = false;
  RunConfig v = w;
  v.mode = RunMode::DistillVanillaDmd;
  const int rc_w = execute(w, "c3_w2svd");
  const int rc_v = execute(v, "c3_vanilla");
  const std::string a = slurp(under("c3_w2svd") / "metrics.csv");
  const std::string b = slurp(under("c3_vanilla") / "metrics.csv");
  const auto rows = std::count(a.begin(), a.end(), '\n') - 1;
  report(3, "reduction-equivalence",
         rc_w == 0 && rc_v == 0 && !a.empty() && a == b &&
             rows == static_cast<long>(kReductionIters),
         std::to_string(rows) + " rows, " + (a == b ? "byte-equal" : "differ"));
}

struct E2e {
  bool ok = false;
  std::string teacher;
  std::string student;
  double student_w2 = NAN;
};

E2e end_to_end() {
  E2e r;
  const auto t0 = std::chrono::steady_clock::now();
  const int rc_t = execute(load("gm8_pretrain.txt", RunMode::Pretrain), "c4_teacher");
  r.teacher = (under("c4_teacher") / "teacher.w2sd").string();
  if (rc_t != 0) {
    report(4, "end-to-end", false, "pretrain exited " + std::to_string(rc_t));
    return r;
  }
  RunConfig s = load("gm8_w2svd.txt", RunMode::DistillW2svd);
  s.distill.teacher_checkpoint = r.teacher;
  const int rc_s = execute(s, "c4_student");
  const double secs = seconds_since(t0);
  r.student = (under("c4_student") / "generator.w2sd").string();
  if (rc_s != 0) {
    report(4, "end-to-end", false, "distill exited " + std::to_string(rc_s));
    return r;
  }
  const auto tj = read_report("c4_teacher"), sj = read_report("c4_student");
  const double tw = tj["w2"], sw = sj["w2"], cov = sj["mode_coverage"];
  r.student_w2 = sw;
  r.ok = true;
  report(4, "end-to-end",
         tw <= kTeacherW2 && sw <= kStudentRatio * tw && cov >= kStudentCoverage &&
             s.distill.iterations <= kStudentIters && secs < kE2eSeconds,
         "teacher_w2=" + num(tw) + " student_w2=" + num(sw) + " ratio=" + num(sw / tw) +
             " (max " + num(kStudentRatio) + ") coverage=" + num(cov) + " iters=" +
             std::to_string(s.distill.iterations) + " " + num(secs) + "s");
  return r;
}

void stability(const std::string& teacher) {
  RunConfig v = load("stress_vanilla.txt", RunMode::DistillVanillaDmd);
  RunConfig w = load("stress_w2svd.txt", RunMode::DistillW2svd);
  v.distill.teacher_checkpoint = w.distill.teacher_checkpoint = teacher;
  const int rc_v = execute(v, "c5_vanilla");
  const int rc_w = execute(w, "c5_w2svd");

  bool complete = rc_v == 0 && rc_w == 0;
  std::string detail;
  for (const char* dir : {"c5_vanilla", "c5_w2svd"}) {
    const auto table = read_csv(under(dir) / "metrics.csv");
    std::size_t full = 0;
    for (const auto& row : table.rows) {
      bool filled = row.size() == table.header.size();
      for (const char* col : {"l_dmd", "l_diff", "l_dis", "l_gen", "grad_norm_phi"})
        filled = filled && !row[table.column(col)].empty();
      full += filled;
    }
    complete = complete && table.rows.size() == kStressIters && full == kStressIters;
    detail += std::string(dir).substr(3) + ":" + std::to_string(full) + " rows ";
  }

  RunConfig cmp;
  cmp.mode = RunMode::Compare;
  cmp.compare_inputs = {(under("c5_vanilla") / "metrics.csv").string(),
                        (under("c5_w2svd") / "metrics.csv").string()};
  const int rc_c = execute(cmp, "c5_compare");
  std::vector<std::string> flags;
  if (rc_c == 0) {
    const auto summary = read_csv(under("c5_compare") / "summary.csv");
    const auto col = summary.column("collapse"), best = summary.column("best_w2");
    for (const auto& row : summary.rows) {
      flags.push_back(row[col]);
      detail += row[0] + " collapse=" + row[col] + " best_w2=" + row[best] + " ";
    }
  }
  const bool flagged = flags.size() == 2 && std::all_of(flags.begin(), flags.end(), [](auto& f) {
                         return f == "yes" || f == "no";
                       });
  report(5, "stability-telemetry", complete && flagged, detail);
}

void curriculum(const E2e& e2e) {
  RunConfig c = load("gm8_onestep.txt", RunMode::TrainOneStep);
  c.distill.teacher_checkpoint = e2e.teacher;
  c.onestep.student_checkpoint = e2e.student;
  const int rc = execute(c, "c6_onestep");
  if (rc != 0) {
    report(6, "curriculum", false, "train-1step exited " + std::to_string(rc));
    return;
  }
  const auto trace = read_csv(under("c6_onestep") / "curriculum.csv");
  const auto wd = trace.column("w_distill"), wm = trace.column("w_dmd");
  bool monotone = true;
  for (std::size_t i = 1; i < trace.rows.size(); ++i) {
    monotone = monotone && std::stod(trace.rows[i][wd]) <= std::stod(trace.rows[i - 1][wd]);
    monotone = monotone && std::stod(trace.rows[i][wm]) >= std::stod(trace.rows[i - 1][wm]);
  }
  const auto& first = trace.rows.front();
  const auto& last = trace.rows.back();
  const bool endpoints = std::stod(first[wd]) == 1.0 && std::stod(first[wm]) == 0.25 &&
                         std::stod(last[wd]) == 0.25 && std::stod(last[wm]) == 1.0;
  const double w1 = read_report("c6_onestep")["w2"];
  report(6, "curriculum",
         monotone && endpoints && w1 <= kOneStepRatio * e2e.student_w2,
         "start=(" + first[wd] + "," + first[wm] + ") end=(" + last[wd] + "," + last[wm] +
             ") monotone=" + (monotone ? "yes" : "no") + " onestep_w2=" + num(w1) +
             " ratio=" + num(w1 / e2e.student_w2) + " (max " + num(kOneStepRatio) + ")");
}

// Runs every mode twice into the same directory and compares all outputs.
void determinism() {
  RunConfig base = load("gm8_w2svd.txt", RunMode::Pretrain);
  base.overwrite = true;
  base.checkpoint_interval = 100;
  base.eval.interval = 50;
  base.eval.samples = 1024;
  base.eval.snapshot_samples = 256;
  base.pretrain.iterations = 300;
  base.distill.iterations = 120;
  base.onestep.iterations = 80;
  base.gradcheck.probes = 40;
  base.distill.teacher_checkpoint = (under("c7/pretrain") / "teacher.w2sd").string();
  base.onestep.student_checkpoint = (under("c7/distill-w2svd") / "generator.w2sd").string();
  base.eval.checkpoint = base.onestep.student_checkpoint;
  base.compare_inputs = {(under("c7/distill-w2svd") / "metrics.csv").string(),
                         (under("c7/distill-vanilla-dmd") / "metrics.csv").string()};

  std::vector<std::string> mismatched;
  std::size_t files = 0;
  for (RunMode mode : {RunMode::Pretrain, RunMode::DistillW2svd, RunMode::DistillVanillaDmd,
                       RunMode::TrainOneStep, RunMode::Eval, RunMode::VerifyProp1,
                       RunMode::Gradcheck, RunMode::Compare}) {
    RunConfig c = base;
    c.mode = mode;
    const std::string out = "c7/" + std::string(to_string(mode));
    std::map<std::string, std::string> first;
    bool same = execute(c, out) == 0;
    for (const auto& e : fs::directory_iterator(under(out)))
      first[e.path().filename().string()] = slurp(e.path());
    same = same && execute(c, out) == 0;
    std::size_t seen = 0;
    for (const auto& e : fs::directory_iterator(under(out))) {
      const auto it = first.find(e.path().filename().string());
      same = same && it != first.end() && it->second == slurp(e.path());
      ++seen;
    }
    same = same && seen == first.size();
    files += seen;
    if (!same) mismatched.push_back(std::string(to_string(mode)));
  }
  std::string detail = "8 modes, " + std::to_string(files) + " files";
  for (const auto& m : mismatched) detail += " mismatch:" + m;
  report(7, "determinism", mismatched.empty(), detail);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance <work-dir>\n");
    return 2;
  }
  g_work = fs::absolute(argv[1]);
  fs::remove_all(g_work);
  fs::create_directories(g_work);
  g_log.open(g_work / "acceptance.log");

  gradient_suite();
  prop1_grid();
  const E2e e2e = end_to_end();
  reduction(e2e.teacher);
  stability(e2e.teacher);
  if (e2e.ok)
    curriculum(e2e);
  else
    report(6, "curriculum", false, "no 4-step student");
  determinism();

  for (const auto& [id, line] : g_lines) std::printf("%s\n", line.c_str());
  std::printf("%s: %d criteria failed\n", g_failures ? "FAIL" : "PASS", g_failures);
  return g_failures ? 1 : 0;
}
