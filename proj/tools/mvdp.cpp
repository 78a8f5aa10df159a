// mvdp: data generation, training, inference, evaluation and benchmarking
// for the multi-view depth pose pipeline.

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "mvdp/dense_classifier.hpp"
#include "mvdp/error.hpp"
#include "mvdp/evaluation.hpp"
#include "mvdp/parallel.hpp"
#include "mvdp/pose_regressor.hpp"
#include "mvdp/synth_renderer.hpp"
#include "mvdp/view_aggregation.hpp"

namespace fs = std::filesystem;
using namespace mvdp;

namespace {

/// Exclusive per-directory lock so two runs never write into the same
/// output directory.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".mvdp.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw Error(ErrorCode::IoFailure, dir.string() + " is locked by another mvdp run (remove " + path_.string() +
                                            " if it is stale)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {
      // The lock is held by the file's existence; the pid is informational.
    }
  }
  ~OutputLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

fs::path parent_or_cwd(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

const std::vector<std::string> kStages = {"easy", "inter", "hard"};
const std::vector<std::string> kSplits = {"train", "validation", "val", "test"};

template <typename T>
std::vector<T> broadcast(std::vector<T> v, std::size_t n, const char* what) {
  if (v.size() == 1) v.assign(n, v.front());
  if (v.size() != n) {
    throw CLI::ValidationError(std::string("--") + what, "give one value or one per stage");
  }
  return v;
}

std::unique_ptr<Classifier> make_classifier(const std::string& spec, double noise) {
  if (spec == "oracle") return std::make_unique<OracleClassifier>(44, noise);
  auto model = std::make_shared<const FcnModel>(load_fcn(spec));
  return std::make_unique<FcnClassifier>(model);
}

ReferenceFrame parse_reference(const std::string& s) {
  return s == "world" ? ReferenceFrame::World : ReferenceFrame::FirstCamera;
}

std::vector<std::string> joint_names() {
  std::vector<std::string> names;
  for (const auto& j : default_body()->skeleton.joints) names.push_back(j.name);
  return names;
}

void print_stage_table(const std::vector<StageTiming>& stages) {
  std::printf("%-10s %10s %10s %10s\n", "stage", "mean_ms", "p95_ms", "frames/s");
  for (const auto& s : stages) {
    const double fps = s.mean() > 0.0 ? 1000.0 / s.mean() : 0.0;
    std::printf("%-10s %10.3f %10.3f %10.1f\n", s.name.c_str(), s.mean(), s.p95(), fps);
  }
}

double non_classifier_ms(const std::vector<StageTiming>& stages) {
  double sum = 0.0;
  for (const auto& s : stages) {
    if (s.name == "fuse" || s.name == "features" || s.name == "predict" || s.name == "smooth") sum += s.mean();
  }
  return sum;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string stage = "easy";
  std::string split = "train";
  std::uint32_t count = 100;
  int cameras = 3;
  std::uint64_t seed = 1;
  fs::path out = "data";
  int size = 128;
  int sequence_length = 0;
  double noise = 0.0;
};

int cmd_gen_data(const GenDataArgs& a) {
  OutputLock lock(a.out);
  auto cfg = DatasetConfig::with_resolution(a.size);
  cfg.sequence_length = a.sequence_length;
  cfg.render.depth_noise_sigma = a.noise;
  const auto m = generate_dataset(parse_stage(a.stage), parse_split(a.split), a.count, a.cameras, a.out, a.seed, cfg);
  std::printf("wrote %u samples to %s\n", m.sample_count, m.container_path.string().c_str());
  std::printf("  stage=%s split=%s cameras=%d size=%dx%d joints=%d labels=%d seed=%llu\n", to_string(m.stage),
              to_string(m.split), m.n_cameras, m.width, m.height, m.n_joints, m.n_labels,
              static_cast<unsigned long long>(m.seed));
  if (m.sequence_length > 0) {
    std::printf("  sequences of %d frames: %zu\n", m.sequence_length, m.posture_ids.size());
  } else {
    std::printf("  distinct postures drawn: %zu\n", m.posture_ids.size());
  }
  return 0;
}

struct TrainClassifierArgs {
  fs::path data;
  std::vector<std::string> stages = {"easy", "inter", "hard"};
  std::vector<int> iterations = {2000};
  std::vector<double> lr = {0.1};
  int batch = 8;
  int lr_step = 0;
  double lr_gamma = 0.1;
  int warmup = 100;
  double clip = 1.0;
  double momentum = 0.9;
  int size = 128;
  std::vector<int> channels = {16, 32, 64, 96};
  int convs_per_block = 2;
  int fusion_stages = 2;
  int final_kernel = 5;
  std::uint64_t seed = 1;
  fs::path out;
  fs::path log;
  fs::path init;
  int eval_every = 0;
  std::size_t validation_limit = 0;
  bool quiet = false;
};

int cmd_train_classifier(const TrainClassifierArgs& a) {
  OutputLock lock(parent_or_cwd(a.out));
  const auto iters = broadcast(a.iterations, a.stages.size(), "iterations");
  const auto lrs = broadcast(a.lr, a.stages.size(), "lr");
  std::vector<CurriculumStage> schedule;
  for (std::size_t i = 0; i < a.stages.size(); ++i) {
    const Stage st = parse_stage(a.stages[i]);
    CurriculumStage cs;
    cs.name = to_string(st);
    cs.train = dataset_path(a.data, st, Split::Train);
    cs.validation = dataset_path(a.data, st, Split::Validation);
    cs.iterations = iters[i];
    cs.learning_rate = lrs[i];
    cs.batch_size = a.batch;
    cs.lr_step = a.lr_step;
    cs.lr_gamma = a.lr_gamma;
    cs.warmup = a.warmup;
    for (const auto& p : {cs.train, cs.validation}) {
      if (!fs::exists(p)) throw Error(ErrorCode::IoFailure, "missing dataset " + p.string() + " (run gen-data first)");
    }
    schedule.push_back(cs);
  }
  CurriculumOptions opt;
  opt.topology.input_size = a.size;
  opt.topology.block_channels = a.channels;
  opt.topology.convs_per_block = a.convs_per_block;
  opt.topology.fusion_stages = a.fusion_stages;
  opt.topology.final_kernel = a.final_kernel;
  opt.seed = a.seed;
  opt.momentum = a.momentum;
  opt.clip_norm = a.clip;
  opt.eval_every = a.eval_every;
  opt.validation_limit = a.validation_limit;
  if (!a.quiet) opt.progress = [](const std::string& m) { std::printf("%s\n", m.c_str()), std::fflush(stdout); };

  std::unique_ptr<FcnModel> initial;
  if (!a.init.empty()) initial = std::make_unique<FcnModel>(load_fcn(a.init));
  try {
    const auto result = train_curriculum(schedule, opt, initial.get());
    save_fcn(a.out, result.model);
    const fs::path log = a.log.empty() ? fs::path(a.out.string() + ".accuracy.csv") : a.log;
    write_accuracy_log(log, result.log);
    std::printf("model: %s (%zu parameters)\naccuracy log: %s\n", a.out.string().c_str(),
                result.model.parameter_count(), log.string().c_str());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NonFiniteLoss) {
      std::fprintf(stderr, "mvdp: training diverged: %s\n", e.what());
      return 1;
    }
    throw;
  }
  return 0;
}

struct TrainRegressorArgs {
  std::vector<fs::path> train;
  std::string classifier = "oracle";
  double noise = 0.0;
  fs::path out;
  fs::path cv_report;
  int folds = 5;
  std::vector<double> lambdas;
  bool no_smoothing = false;
  std::size_t limit = 0;
  std::uint64_t seed = 1;
  double threshold = kDefaultProbabilityThreshold;
  std::string reference = "camera0";
};

int cmd_train_regressor(const TrainRegressorArgs& a) {
  OutputLock lock(parent_or_cwd(a.out));
  const auto classifier = make_classifier(a.classifier, a.noise);
  auto cv = CvOptions::defaults();
  cv.folds = a.folds;
  if (!a.lambdas.empty()) cv.lambdas = a.lambdas;
  if (a.no_smoothing) cv.smoothings = {SmoothingConfig::off()};
  PipelineOptions po;
  po.reference = parse_reference(a.reference);
  po.probability_threshold = a.threshold;
  po.classes = classifier->classes();
  const auto fit = fit_pipeline_regressor(a.train, *classifier, cv, a.seed, po, a.limit);
  save_regressor(a.out, fit.model);
  const fs::path report = a.cv_report.empty() ? fs::path(a.out.string() + ".cv.csv") : a.cv_report;
  write_cv_report(report, fit.cv.report);
  std::printf("frames: %zu (empty clouds: %zu)\n", fit.frames, fit.empty_clouds);
  std::printf("selected lambda=%g window=%d rho=%g cv_error=%.4f m\n", fit.cv.lambda, fit.cv.smoothing.window(),
              fit.cv.smoothing.rho(), fit.cv.mean_error);
  std::printf("regressor: %s\ncv report: %s\n", a.out.string().c_str(), report.string().c_str());
  return 0;
}

struct RunArgs {
  fs::path data;
  std::string classifier = "oracle";
  double noise = 0.0;
  fs::path regressor;
  fs::path out_dir = "run";
  std::string smoothing = "on";
  std::size_t limit = 0;
  std::uint64_t seed = 1;
  double threshold = kDefaultProbabilityThreshold;
};

int cmd_run(const RunArgs& a) {
  OutputLock lock(a.out_dir);
  const auto classifier = make_classifier(a.classifier, a.noise);
  const auto regressor = load_regressor(a.regressor);
  ExperimentConfig cfg;
  cfg.container = a.data;
  cfg.classifier = classifier.get();
  cfg.regressor = &regressor;
  cfg.smoothing = a.smoothing == "on";
  cfg.pipeline.probability_threshold = a.threshold;
  cfg.pipeline.classes = classifier->classes();
  cfg.limit = a.limit;
  cfg.seed = a.seed;
  const auto r = run_experiment(cfg);
  write_predictions(a.out_dir / "predictions.csv", r.predictions);
  write_predictions(a.out_dir / "groundtruth.csv", r.truths);
  write_timings(a.out_dir / "timings.csv", r.stages);
  std::printf("frames: %zu (empty clouds: %zu)\n", r.frames, r.empty_clouds);
  print_stage_table(r.stages);
  std::printf("throughput: %.1f frames/s end to end\n", r.wall_ms > 0 ? 1000.0 * r.frames / r.wall_ms : 0.0);
  std::printf("predictions: %s\n", (a.out_dir / "predictions.csv").string().c_str());
  return 0;
}

struct EvalArgs {
  fs::path pred;
  fs::path truth;
  double threshold = kHeadlineThreshold;
  fs::path out_dir;
};

int cmd_eval(const EvalArgs& a) {
  std::unique_ptr<OutputLock> lock;
  if (!a.out_dir.empty()) lock = std::make_unique<OutputLock>(a.out_dir);
  const auto preds = read_predictions(a.pred);
  const auto truths = read_predictions(a.truth);
  const auto report = mean_joint_error(preds, truths);
  auto thresholds = default_thresholds();
  bool listed = false;
  for (double t : thresholds) listed = listed || std::abs(t - a.threshold) < 1e-12;
  if (!listed) {
    thresholds.push_back(a.threshold);
    std::sort(thresholds.begin(), thresholds.end());
  }
  const auto curve = precision_at(preds, truths, thresholds);
  const auto names = joint_names();
  std::printf("frames: %zu\nmean joint error: %.4f m\nprecision@%.2f m: %.4f\n", report.samples, report.overall,
              a.threshold, curve.at(a.threshold));
  std::printf("%-12s %10s %10s\n", "joint", "mean_m", "std_m");
  for (std::size_t j = 0; j < report.mean.size(); ++j) {
    std::printf("%-12s %10.4f %10.4f\n", j < names.size() ? names[j].c_str() : "?", report.mean[j], report.stddev[j]);
  }
  if (!a.out_dir.empty()) {
    write_joint_report(a.out_dir / "joint_errors.csv", report, names);
    write_precision_curve(a.out_dir / "precision.csv", curve);
  }
  return 0;
}

struct BenchArgs {
  fs::path data;
  std::string classifier = "oracle";
  fs::path regressor;
  std::size_t frames = 100;
  fs::path out;
  std::uint64_t seed = 1;
};

int cmd_bench(const BenchArgs& a) {
  const auto classifier = make_classifier(a.classifier, 0.0);
  const auto regressor = load_regressor(a.regressor);
  ExperimentConfig cfg;
  cfg.container = a.data;
  cfg.classifier = classifier.get();
  cfg.regressor = &regressor;
  cfg.pipeline.classes = classifier->classes();
  cfg.limit = a.frames;
  cfg.seed = a.seed;
  const auto r = run_experiment(cfg);
  DatasetReader reader(a.data);
  std::printf("bench: %zu frames, %d cameras, %dx%d, %d worker(s)\n", r.frames, reader.header().n_cameras,
              reader.header().width, reader.header().height, worker_count());
  print_stage_table(r.stages);
  const double rest = non_classifier_ms(r.stages);
  std::printf("non-classifier stages (fuse+features+predict+smooth): %.3f ms/frame (budget 33 ms: %s)\n", rest,
              rest <= 33.0 ? "within" : "over");
  if (!a.out.empty()) {
    OutputLock lock(parent_or_cwd(a.out));
    write_timings(a.out, r.stages);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view depth pose pipeline: synthetic data, dense part classification, pose regression."};
  app.set_config("--config", "", "INI/TOML file with option defaults; command-line flags override it");
  app.require_subcommand(1, 1);
  app.option_defaults()->always_capture_default();
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (overrides MVDP_THREADS; 0 keeps the default)")
      ->check(CLI::NonNegativeNumber);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset container and its manifest");
  gen->add_option("--stage", gd.stage, "Curriculum stage")->check(CLI::IsMember(kStages));
  gen->add_option("--split", gd.split, "Posture split")->check(CLI::IsMember(kSplits));
  gen->add_option("--count", gd.count, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--cameras", gd.cameras, "Cameras per sample")->check(CLI::Range(1, 255));
  gen->add_option("--seed", gd.seed, "Master seed");
  gen->add_option("--out", gd.out, "Output directory");
  gen->add_option("--size", gd.size, "Image width and height in pixels")->check(CLI::Range(16, 4096));
  gen->add_option("--sequence-length", gd.sequence_length, "Frames per walking sequence (0 = independent samples)")
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--noise", gd.noise, "Depth noise sigma in meters")->check(CLI::NonNegativeNumber);

  TrainClassifierArgs tc;
  auto* tcl = app.add_subcommand("train-classifier", "Train the dense part classifier over a curriculum");
  tcl->add_option("--data", tc.data, "Dataset directory with <stage>_train/_validation containers")->required();
  tcl->add_option("--stages", tc.stages, "Curriculum stages in order")->check(CLI::IsMember(kStages));
  tcl->add_option("--iterations", tc.iterations, "Iterations per stage (one value or one per stage)")
      ->check(CLI::PositiveNumber);
  tcl->add_option("--lr", tc.lr, "Base learning rate per stage (one value or one per stage)");
  tcl->add_option("--batch", tc.batch, "Images per iteration")->check(CLI::PositiveNumber);
  tcl->add_option("--lr-step", tc.lr_step, "Iterations between learning-rate decays (0 = constant)");
  tcl->add_option("--lr-gamma", tc.lr_gamma, "Learning-rate decay factor");
  tcl->add_option("--warmup", tc.warmup, "Linear learning-rate warmup iterations at each stage start");
  tcl->add_option("--clip", tc.clip, "Gradient L2 norm cap (0 = off)");
  tcl->add_option("--momentum", tc.momentum, "Momentum");
  tcl->add_option("--size", tc.size, "Network window size S");
  tcl->add_option("--channels", tc.channels, "Channels per conv block");
  tcl->add_option("--convs-per-block", tc.convs_per_block, "Convolutions per block");
  tcl->add_option("--fusion-stages", tc.fusion_stages, "Learned 2x upsamplings fused with lower blocks");
  tcl->add_option("--final-kernel", tc.final_kernel, "Final upsampling kernel size (odd)");
  tcl->add_option("--seed", tc.seed, "Initialization and batch-order seed");
  tcl->add_option("--out", tc.out, "Output model file (MVDM)")->required();
  tcl->add_option("--log", tc.log, "Accuracy log CSV (default <out>.accuracy.csv)");
  tcl->add_option("--init", tc.init, "Start from this model instead of a fresh initialization");
  tcl->add_option("--eval-every", tc.eval_every, "Validate every N iterations (0 = stage boundaries only)");
  tcl->add_option("--validation-limit", tc.validation_limit, "Max validation images (0 = all)");
  tcl->add_flag("--quiet", tc.quiet, "Suppress progress lines");

  TrainRegressorArgs tr;
  auto* trg = app.add_subcommand("train-regressor", "Fit the ridge pose regressor with cross-validated settings");
  trg->add_option("--train", tr.train, "Training containers (.mvds); sequence containers drive smoothing selection")
      ->required()
      ->check(CLI::ExistingFile);
  trg->add_option("--classifier", tr.classifier, "'oracle' or a classifier model file");
  trg->add_option("--oracle-noise", tr.noise, "Label noise rate for the oracle")->check(CLI::Range(0.0, 1.0));
  trg->add_option("--out", tr.out, "Output regressor file (MVDM)")->required();
  trg->add_option("--cv-report", tr.cv_report, "CV report CSV (default <out>.cv.csv)");
  trg->add_option("--folds", tr.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
  trg->add_option("--lambda", tr.lambdas, "Lambda grid override");
  trg->add_flag("--no-smoothing", tr.no_smoothing, "Only consider K = 0");
  trg->add_option("--limit", tr.limit, "Max samples per container (0 = all)");
  trg->add_option("--seed", tr.seed, "Seed for the oracle's label noise");
  trg->add_option("--threshold", tr.threshold, "Minimum class probability for a point")->check(CLI::Range(0.0, 1.0));
  trg->add_option("--reference", tr.reference, "Reference frame")->check(CLI::IsMember({"camera0", "world"}));

  RunArgs rn;
  auto* run = app.add_subcommand("run", "Stream a container through classify, fuse, features, predict, smooth");
  run->add_option("--data", rn.data, "Input container (.mvds)")->required()->check(CLI::ExistingFile);
  run->add_option("--classifier", rn.classifier, "'oracle' or a classifier model file");
  run->add_option("--oracle-noise", rn.noise, "Label noise rate for the oracle")->check(CLI::Range(0.0, 1.0));
  run->add_option("--regressor", rn.regressor, "Regressor model file")->required()->check(CLI::ExistingFile);
  run->add_option("--out-dir", rn.out_dir, "Output directory");
  run->add_option("--smoothing", rn.smoothing, "Temporal smoothing")->check(CLI::IsMember({"on", "off"}));
  run->add_option("--limit", rn.limit, "Max frames (0 = all)");
  run->add_option("--seed", rn.seed, "Seed for the oracle's label noise");
  run->add_option("--threshold", rn.threshold, "Minimum class probability for a point")->check(CLI::Range(0.0, 1.0));

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Score predictions against groundtruth");
  eval->add_option("--pred", ev.pred, "Predictions CSV (frame,joint,x,y,z)")->required()->check(CLI::ExistingFile);
  eval->add_option("--truth", ev.truth, "Groundtruth CSV (frame,joint,x,y,z)")->required()->check(CLI::ExistingFile);
  eval->add_option("--threshold", ev.threshold, "Headline precision threshold in meters")->check(CLI::PositiveNumber);
  eval->add_option("--out-dir", ev.out_dir, "Directory for joint_errors.csv and precision.csv");

  BenchArgs bn;
  auto* bench = app.add_subcommand("bench", "Per-stage timing table");
  bench->add_option("--data", bn.data, "Input container (.mvds)")->required()->check(CLI::ExistingFile);
  bench->add_option("--classifier", bn.classifier, "'oracle' or a classifier model file");
  bench->add_option("--regressor", bn.regressor, "Regressor model file")->required()->check(CLI::ExistingFile);
  bench->add_option("--frames", bn.frames, "Frames to time")->check(CLI::PositiveNumber);
  bench->add_option("--out", bn.out, "Optional timings CSV");
  bench->add_option("--seed", bn.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (threads > 0) ::setenv("MVDP_THREADS", std::to_string(threads).c_str(), 1);

  try {
    if (*gen) return cmd_gen_data(gd);
    if (*tcl) return cmd_train_classifier(tc);
    if (*trg) return cmd_train_regressor(tr);
    if (*run) return cmd_run(rn);
    if (*eval) return cmd_eval(ev);
    if (*bench) return cmd_bench(bn);
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "mvdp: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "mvdp: %s\n", e.what());
    return e.code() == ErrorCode::InvalidStage ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mvdp: %s\n", e.what());
    return 1;
  }
  return 2;
}
