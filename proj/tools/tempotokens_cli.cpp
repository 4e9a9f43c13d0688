#include <CLI11.hpp>
#include <json.hpp>

#include <tempotokens/tempotokens.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace tempo;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kFormat = 2, kDuration = 3, kNumeric = 4 };

int exit_code_for(const std::exception &e) {
  if (dynamic_cast<const DurationMismatchError *>(&e)) {
    return kDuration;
  }
  if (dynamic_cast<const NumericError *>(&e)) {
    return kNumeric;
  }
  if (dynamic_cast<const Error *>(&e)) {
    return kFormat;
  }
  return kFailure;
}

std::uint64_t default_seed() {
  const char *env = std::getenv("TEMPO_SEED");
  if (!env || !*env) {
    return 0;
  }
  try {
    std::size_t used = 0;
    const auto v = std::stoull(env, &used);
    if (used == std::string(env).size()) {
      return v;
    }
  } catch (const std::logic_error &) {
  }
  throw ValidationError(std::string("TEMPO_SEED is not an unsigned integer: ") +
                        env);
}

// Config file: one "key=value" per line, '#' starts a comment, keys are flag
// names without the leading dashes. Command-line flags win over the file.
std::vector<std::string> read_config(const fs::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw FormatError("cannot open config file " + path.string());
  }
  std::vector<std::string> args;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": empty key");
    }
    if (value == "true") {
      args.push_back("--" + key);
    } else if (value != "false") {
      args.push_back("--" + key + "=" + value);
    }
  }
  return args;
}

std::string flag_name(const std::string &arg) {
  const auto eq = arg.find('=');
  return arg.substr(0, eq);
}

// Splices config-file flags in after the subcommand, skipping any flag that
// already appears on the command line.
std::vector<std::string> expand_args(int argc, char **argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::optional<fs::path> config;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) {
        throw ValidationError("--config needs a path");
      }
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!config) {
    return rest;
  }
  std::vector<std::string> present;
  for (const auto &a : rest) {
    if (a.rfind("--", 0) == 0) {
      present.push_back(flag_name(a));
    }
  }
  std::vector<std::string> extra;
  for (const auto &a : read_config(*config)) {
    if (std::find(present.begin(), present.end(), flag_name(a)) ==
        present.end()) {
      extra.push_back(a);
    }
  }
  if (rest.empty()) {
    return extra;
  }
  std::vector<std::string> out{rest.front()};
  out.insert(out.end(), extra.begin(), extra.end());
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

// ---------------------------------------------------------------------------

struct AvAlignArgs {
  std::string video;
  std::string audio;
  std::size_t tolerance = 1;
  std::string fps_override;
  std::string motion_mode = "curve";
  bool json = false;
  bool batch = false;
  std::size_t jobs = 1;
};

AlignReport align_files(const AvAlignArgs &a, const std::string &video_path,
                        const std::string &audio_path) {
  Video video = read_video(video_path);
  const AudioSignal audio = read_wav(audio_path);
  if (!a.fps_override.empty()) {
    video.fps = Rational::parse(a.fps_override);
  }
  AlignOptions opts;
  opts.tolerance = a.tolerance;
  opts.motion_mode = a.motion_mode == "derivative" ? MotionPeakMode::derivative
                                                   : MotionPeakMode::curve;
  return av_align_from_media(video, audio, opts);
}

int run_av_align(const AvAlignArgs &a) {
  if (!a.batch) {
    if (a.video.empty() || a.audio.empty()) {
      throw ValidationError("av-align needs --video and --audio (or --batch)");
    }
    const AlignReport r = align_files(a, a.video, a.audio);
    for (const auto &w : r.warnings) {
      std::cerr << "warning: " << w << "\n";
    }
    if (a.json) {
      std::cout << to_json(r).dump(2) << "\n";
    } else {
      std::cout << to_key_value(r);
    }
    return kOk;
  }

  // Batch: "video audio" per line on stdin; results in input order.
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  while (std::getline(std::cin, line)) {
    std::istringstream fields(line);
    std::string v, au;
    if (!(fields >> v)) {
      continue;
    }
    if (!(fields >> au)) {
      throw ValidationError("batch line needs two paths: " + line);
    }
    pairs.emplace_back(v, au);
  }
  struct Outcome {
    std::optional<AlignReport> report;
    std::string error;
    int code = kOk;
  };
  std::vector<Outcome> outcomes(pairs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < pairs.size(); i = next++) {
      try {
        outcomes[i].report = align_files(a, pairs[i].first, pairs[i].second);
      } catch (const std::exception &e) {
        outcomes[i].error = e.what();
        outcomes[i].code = exit_code_for(e);
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, a.jobs);
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) {
    pool.emplace_back(worker);
  }
  worker();
  for (auto &t : pool) {
    t.join();
  }

  int code = kOk;
  double sum = 0.0;
  std::size_t scored = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Outcome &o = outcomes[i];
    if (o.report) {
      sum += o.report->score;
      ++scored;
    } else if (code == kOk) {
      code = o.code;
    }
    if (a.json) {
      nlohmann::json doc = o.report ? to_json(*o.report) : nlohmann::json::object();
      doc["video_path"] = pairs[i].first;
      doc["audio_path"] = pairs[i].second;
      if (!o.report) {
        doc["error"] = o.error;
      }
      std::cout << doc.dump() << "\n";
    } else if (o.report) {
      std::printf("%s %s score=%.6f\n", pairs[i].first.c_str(),
                  pairs[i].second.c_str(), o.report->score);
    } else {
      std::printf("%s %s error=%s\n", pairs[i].first.c_str(),
                  pairs[i].second.c_str(), o.error.c_str());
    }
  }
  if (!a.json && scored > 0) {
    std::printf("mean_score=%.6f\n", sum / static_cast<double>(scored));
  }
  return code;
}

// ---------------------------------------------------------------------------

struct TokensArgs {
  std::string embeddings;
  std::string audio;
  bool toy_encoder = false;
  std::size_t length = 24;
  std::size_t layers = 2;
  std::size_t dim = 16;
  std::string out;
  std::string mode = "windows";
  std::string ckpt;
  std::size_t hidden = 512;
  std::uint64_t seed = 0;
};

ConditionMode parse_mode(const std::string &m) {
  return m == "vec" ? ConditionMode::single_vector : ConditionMode::windows;
}

int run_tokens(const TokensArgs &a) {
  if (a.embeddings.empty() == a.audio.empty()) {
    throw ValidationError("tokens needs exactly one of --embeddings or --audio");
  }
  if (!a.audio.empty() && !a.toy_encoder) {
    throw ValidationError("--audio input requires --toy-encoder");
  }
  AudioEmbeddings emb;
  std::optional<ToyModel> model;
  if (!a.ckpt.empty()) {
    model = read_checkpoint(a.ckpt);
  }
  if (!a.embeddings.empty()) {
    emb = read_embeddings(a.embeddings);
    if (model) {
      emb = model->normalise(std::move(emb));
    }
  } else {
    const AudioSignal audio = read_wav(a.audio);
    emb = model ? model->embed(audio)
                : toy_audio_features(audio, a.length, a.layers, a.dim);
  }
  if (!model) {
    ModelConfig cfg;
    cfg.frames = emb.segments();
    cfg.emb_layers = emb.layers();
    cfg.emb_dim = emb.dim();
    cfg.mapper_hidden = {a.hidden, a.hidden, a.hidden};
    model = ToyModel::init(cfg, a.seed);
  }
  const TempoTokens tokens = map_audio(emb, model->adapter.mapper);
  const ConditioningSequence cond =
      make_condition(tokens, model->adapter.pooling, parse_mode(a.mode));
  write_condition(cond, a.out);
  std::cout << "frames=" << cond.frame_count() << "\n"
            << "tokens_per_frame=" << cond.tokens_per_frame() << "\n"
            << "token_dim=" << cond.token_dim() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct GenSynthArgs {
  std::string out;
  std::size_t clips = 32;
  std::size_t shift = 0;
  std::uint64_t seed = 0;
  std::string kind = "bounce";
  std::uint32_t width = 64;
  std::uint32_t height = 64;
  std::string fps = "24";
  double duration = 4.0;
  std::size_t events = 6;
};

int run_gen_synth(const GenSynthArgs &a) {
  SynthConfig cfg;
  cfg.width = a.width;
  cfg.height = a.height;
  cfg.fps = Rational::parse(a.fps);
  cfg.duration = a.duration;
  cfg.n_events = a.events;
  cfg.kind = parse_event_kind(a.kind);
  cfg.shift_frames = a.shift;
  cfg.seed = a.seed;
  const auto entries = write_corpus(cfg, a.clips, a.out);
  std::cout << "clips=" << entries.size() << "\n"
            << "manifest=" << (fs::path(a.out) / "manifest.txt").string()
            << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string corpus;
  std::size_t steps = 200;
  double lr = 1e-5;
  double lambda_l1 = 0.0;
  std::string ckpt;
  std::string loss_log;
  std::size_t batch = 8;
  std::size_t hidden = 512;
  std::size_t length = 24;
  std::string mode = "windows";
  std::string optimizer = "sgd";
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs &a) {
  fs::path manifest = a.corpus;
  if (fs::is_directory(manifest)) {
    manifest /= "manifest.txt";
  }
  const auto entries = read_manifest(manifest);
  ModelConfig cfg;
  cfg.frames = a.length;
  cfg.mapper_hidden = {a.hidden, a.hidden, a.hidden};
  cfg.mode = parse_mode(a.mode);
  Video first = read_video(entries.front().video);
  cfg.width = first.width;
  cfg.height = first.height;
  ToyModel model = ToyModel::init(cfg, a.seed);

  std::vector<TrainItem> items;
  for (const auto &e : entries) {
    items.push_back(prepare_item(read_video(e.video), read_wav(e.audio), model));
  }
  fit_normalisation(model, items);

  TrainConfig tc;
  tc.steps = a.steps;
  tc.learning_rate = a.lr;
  tc.lambda_l1 = a.lambda_l1;
  tc.batch_videos = a.batch;
  tc.seed = a.seed;
  tc.optimizer = a.optimizer == "adamw" ? Optimizer::adamw : Optimizer::sgd;

  const std::uint64_t frozen_before = model.denoiser.compute_fingerprint();
  const std::uint64_t codec_before = model.codec.fingerprint();
  const TrainResult result = train(model, items, tc);
  if (model.denoiser.compute_fingerprint() != frozen_before ||
      model.codec.fingerprint() != codec_before) {
    throw NumericError("frozen parameters changed during training");
  }
  write_checkpoint(model, a.ckpt);
  const fs::path log = a.loss_log.empty() ? fs::path(a.ckpt + ".loss.txt")
                                          : fs::path(a.loss_log);
  write_loss_history(result.history, log);

  std::printf("steps=%zu\n", result.history.size());
  if (!result.history.empty()) {
    const auto [head, tail] = window_means(result.history, 20);
    std::printf("first_window_mean=%.6f\nlast_window_mean=%.6f\nratio=%.6f\n",
                head, tail, tail / head);
  }
  std::printf("loss_log=%s\n", log.string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string ckpt;
  std::string audio;
  std::string out;
  std::string fps;
  std::uint64_t seed = 0;
};

int run_generate(const GenerateArgs &a) {
  const ToyModel model = read_checkpoint(a.ckpt);
  const AudioSignal audio = read_wav(a.audio);
  Rational fps;
  if (a.fps.empty()) {
    // L frames spread over the audio's duration.
    const double d = audio.duration();
    if (!(d > 0.0)) {
      throw ValidationError("audio is empty");
    }
    fps = Rational{static_cast<std::uint32_t>(std::llround(model.config.frames * 1000.0 / d)),
                   1000};
  } else {
    fps = Rational::parse(a.fps);
  }
  const Video video = generate(model, model.embed(audio), fps, a.seed);
  write_video(video, a.out);
  std::printf("frames=%zu\nwidth=%u\nheight=%u\n", video.frames.size(),
              video.width, video.height);
  return kOk;
}

} // namespace

int main(int argc, char **argv) {
  std::vector<std::string> args;
  AvAlignArgs align;
  TokensArgs tokens;
  GenSynthArgs synth;
  TrainArgs trainer;
  GenerateArgs gen;
  try {
    args = expand_args(argc, argv);
    const std::uint64_t seed = default_seed();
    tokens.seed = synth.seed = trainer.seed = gen.seed = seed;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }

  CLI::App app{"Audio-conditioned video toolkit: alignment scoring, "
               "conditioning tokens and a toy diffusion trainer"};
  app.require_subcommand(1);
  app.add_option("--config", "key=value file with default flag values");

  auto *av = app.add_subcommand("av-align", "Score audio/video alignment");
  av->add_option("--video", align.video, "RVID file or PPM directory");
  av->add_option("--audio", align.audio, "PCM WAV file");
  av->add_option("--tolerance", align.tolerance, "Match tolerance in frames");
  av->add_option("--fps-override", align.fps_override,
                 "Frame rate to use instead of the container's");
  av->add_option("--motion-mode", align.motion_mode,
                 "Peaks of the motion curve or of its derivative")
      ->check(CLI::IsMember({"curve", "derivative"}));
  av->add_flag("--json", align.json, "Print a JSON report");
  av->add_flag("--batch", align.batch,
               "Read 'video audio' path pairs from stdin");
  av->add_option("--jobs", align.jobs, "Parallel workers in batch mode")
      ->check(CLI::PositiveNumber);

  auto *tk = app.add_subcommand("tokens", "Write a conditioning sequence");
  tk->add_option("--embeddings", tokens.embeddings, "TTE1 embeddings file");
  tk->add_option("--audio", tokens.audio, "PCM WAV file");
  tk->add_flag("--toy-encoder", tokens.toy_encoder,
               "Use the built-in log-mel stand-in encoder");
  tk->add_option("--L", tokens.length, "Audio segments")
      ->check(CLI::PositiveNumber);
  tk->add_option("--layers", tokens.layers, "Encoder layers")
      ->check(CLI::PositiveNumber);
  tk->add_option("--dim", tokens.dim, "Encoder width")
      ->check(CLI::PositiveNumber);
  tk->add_option("--out", tokens.out, "TTC1 output path")->required();
  tk->add_option("--mode", tokens.mode, "windows or vec")
      ->check(CLI::IsMember({"windows", "vec"}));
  tk->add_option("--ckpt", tokens.ckpt, "Trained checkpoint");
  tk->add_option("--hidden", tokens.hidden, "Mapper hidden width")
      ->check(CLI::PositiveNumber);
  tk->add_option("--seed", tokens.seed, "Initialisation seed");

  auto *gs = app.add_subcommand("gen-synth", "Write a synthetic corpus");
  gs->add_option("--out", synth.out, "Output directory")->required();
  gs->add_option("--clips", synth.clips, "Number of clips")
      ->check(CLI::PositiveNumber);
  gs->add_option("--shift", synth.shift, "Audio delay in frames");
  gs->add_option("--seed", synth.seed, "Base seed");
  gs->add_option("--kind", synth.kind, "bounce or flash")
      ->check(CLI::IsMember({"bounce", "flash"}));
  gs->add_option("--width", synth.width)->check(CLI::PositiveNumber);
  gs->add_option("--height", synth.height)->check(CLI::PositiveNumber);
  gs->add_option("--fps", synth.fps);
  gs->add_option("--duration", synth.duration)->check(CLI::PositiveNumber);
  gs->add_option("--events", synth.events);

  auto *tr = app.add_subcommand("train-toy", "Train the adapter on a corpus");
  tr->add_option("--corpus", trainer.corpus, "Corpus directory or manifest")
      ->required();
  tr->add_option("--steps", trainer.steps, "Optimisation steps");
  tr->add_option("--lr", trainer.lr, "Learning rate")
      ->check(CLI::PositiveNumber);
  tr->add_option("--lambda-l1", trainer.lambda_l1, "L1 weight on TempoTokens")
      ->check(CLI::NonNegativeNumber);
  tr->add_option("--ckpt", trainer.ckpt, "Checkpoint output path")->required();
  tr->add_option("--loss-log", trainer.loss_log,
                 "Loss history path (default: <ckpt>.loss.txt)");
  tr->add_option("--batch", trainer.batch, "Videos per batch")
      ->check(CLI::PositiveNumber);
  tr->add_option("--hidden", trainer.hidden, "Mapper hidden width")
      ->check(CLI::PositiveNumber);
  tr->add_option("--L", trainer.length, "Frames and segments per clip")
      ->check(CLI::PositiveNumber);
  tr->add_option("--mode", trainer.mode, "windows or vec")
      ->check(CLI::IsMember({"windows", "vec"}));
  tr->add_option("--optimizer", trainer.optimizer, "sgd or adamw")
      ->check(CLI::IsMember({"sgd", "adamw"}));
  tr->add_option("--seed", trainer.seed, "Seed for init, batching and noise");

  auto *ge = app.add_subcommand("generate", "Sample a video from audio");
  ge->add_option("--ckpt", gen.ckpt, "Trained checkpoint")->required();
  ge->add_option("--audio", gen.audio, "PCM WAV file")->required();
  ge->add_option("--out", gen.out, "RVID output path")->required();
  ge->add_option("--fps", gen.fps, "Output frame rate (default: L / duration)");
  ge->add_option("--seed", gen.seed, "Sampling seed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kFormat;
  }

  try {
    if (*av) {
      return run_av_align(align);
    }
    if (*tk) {
      return run_tokens(tokens);
    }
    if (*gs) {
      return run_gen_synth(synth);
    }
    if (*tr) {
      return run_train(trainer);
    }
    if (*ge) {
      return run_generate(gen);
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kFailure;
}
