// SPDX-License-Identifier: Apache-2.0
#include "dualvc/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <thread>

#include "CLI11.hpp"
#include "dualvc/bench.hpp"
#include "dualvc/bytes.hpp"
#include "dualvc/config_io.hpp"
#include "dualvc/gradsuite.hpp"
#include "dualvc/streaming.hpp"
#include "dualvc/synthdata.hpp"
#include "dualvc/training.hpp"

namespace dualvc {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string model;
  std::string input;
  std::string log;
  std::string manifest;
  std::string mode = "streaming";
  std::size_t speaker = 0;
  std::optional<std::size_t> steps;
  double chunk_ms = 160.0;
  double hop_ms = 12.5;
  double tolerance = 1e-5;
  std::vector<std::size_t> chunk_frames{1, 4, 16};
  std::size_t frames = 400;
  std::size_t reps = 5;
  std::optional<double> force_rtf;
  std::optional<double> sleep_rtf;
};

Mode parse_mode(const std::string& s) {
  if (s == "streaming") return Mode::Streaming;
  if (s == "non-streaming") return Mode::NonStreaming;
  throw ArgumentError("unknown mode '" + s + "' (expected streaming or non-streaming)");
}

RunConfig run_config(const Options& o) {
  return o.config.empty() ? RunConfig{} : load_run_config(o.config);
}

void write_json(const fs::path& path, const json& j) {
  const std::string text = j.dump(2) + "\n";
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void write_manifest(const fs::path& path, const std::vector<std::string>& args, const std::string& command,
                    const json& config, std::uint64_t seed, const json& outputs) {
  json m;
  m["tool"] = "dualvc";
  m["version"] = kVersion;
  m["compiler"] = __VERSION__;
  m["command"] = command;
  m["args"] = args;
  m["seed"] = seed;
  m["config"] = config;
  m["outputs"] = outputs;
  write_json(path, m);
}

fs::path beside(const std::string& out) { return fs::path(out + ".manifest.json"); }

Model load_model(const Options& o) {
  if (o.model.empty()) return Model(run_config(o).model);
  return model_from_checkpoint(load_checkpoint(o.model));
}

int cmd_synth_data(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  RunConfig rc = run_config(o);
  if (o.seed) rc.corpus.seed = *o.seed;
  const Corpus corpus = generate_corpus(rc.corpus);
  save_corpus(o.out, corpus);
  json oracle = json::array();
  for (std::size_t s = 0; s < rc.corpus.n_speakers; ++s) oracle.push_back(linear_oracle(corpus, s));
  write_manifest(fs::path(o.out) / "manifest.json", args, "synth-data", to_json(rc.corpus), rc.corpus.seed,
                 {{"directory", o.out}, {"utterances", corpus.utterances.size()}, {"linear_oracle_mse", oracle}});
  out << "wrote " << corpus.utterances.size() << " utterances to " << o.out << "\n";
  for (std::size_t s = 0; s < oracle.size(); ++s)
    out << "linear_oracle_mse[speaker " << s << "]=" << oracle[s].get<double>() << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  RunConfig rc = run_config(o);
  if (o.seed) rc.train.seed = rc.model.seed = *o.seed;
  if (o.steps) rc.train.steps = *o.steps;
  const Corpus corpus = load_corpus(o.data);
  rc.model.encoder.input_dim = corpus.config.content_dim;
  rc.model.decoder.output_dim = corpus.config.feature_dim;
  rc.model.decoder.n_speakers = corpus.config.n_speakers;
  Model model(rc.model);
  Trainer trainer(model, corpus, rc.train);
  const std::string log_path = o.log.empty() ? o.out + ".log.csv" : o.log;
  std::ofstream log(log_path);
  if (!log) throw Error("cannot open '" + log_path + "' for writing");
  log << "step,L_rec_s,L_rec_ns,L_hpc_s,L_hpc_ns,L_distill,L_total\n";
  char line[256];
  LossBreakdown last;
  for (std::size_t i = 0; i < rc.train.steps; ++i) {
    last = trainer.step();
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", trainer.step_count(),
                  last.rec_streaming, last.rec_nonstreaming, last.hpc_streaming, last.hpc_nonstreaming,
                  last.distill, last.total);
    log << line;
  }
  save_checkpoint(o.out, model, trainer.step_count());
  json cfg = to_json(rc);
  cfg["data"] = o.data;
  write_manifest(beside(o.out), args, "train", cfg, rc.train.seed,
                 {{"checkpoint", o.out}, {"log", log_path}, {"final_loss", last.total}});
  out << "trained " << trainer.step_count() << " steps, final L_total=" << last.total << "\n";
  return kExitOk;
}

int cmd_convert(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  Model model = load_model(o);
  const FeatureFile in = read_features(o.input);
  const Mode mode = parse_mode(o.mode);
  model.decoder.check_speaker(o.speaker);
  // Streaming-mode offline conversion is a single chunk of the streaming engine.
  const Tensor y = mode == Mode::Streaming ? stream_convert(model, in.frames, o.speaker, in.frames.rows())
                                           : model.convert(in.frames, o.speaker, mode);
  write_features(o.out, y, in.hop_ms);
  write_manifest(beside(o.out), args, "convert", {{"model", to_json(model.config)}, {"mode", o.mode}},
                 model.config.seed, {{"output", o.out}, {"frames", y.rows()}});
  out << "converted " << y.rows() << " frames (" << o.mode << ") to " << o.out << "\n";
  return kExitOk;
}

int cmd_stream(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  Model model = load_model(o);
  const FeatureFile in = read_features(o.input);
  const std::size_t chunk = chunk_frames_from_ms(o.chunk_ms, in.hop_ms);
  std::vector<double> seconds;
  const Tensor y = stream_convert(model, in.frames, o.speaker, chunk, &seconds);
  write_features(o.out, y, in.hop_ms);
  double total = 0.0;
  char line[128];
  for (std::size_t i = 0; i < seconds.size(); ++i) {
    const std::size_t n = std::min(chunk, in.frames.rows() - i * chunk);
    std::snprintf(line, sizeof(line), "chunk %zu frames=%zu ms=%.3f\n", i, n, seconds[i] * 1e3);
    out << line;
    total += seconds[i];
  }
  const double duration = static_cast<double>(in.frames.rows()) * in.hop_ms / 1000.0;
  const double flops = static_cast<double>(count_flops(model.config, Mode::Streaming, in.frames.rows()));
  const LatencyReport report = make_latency_report(o.chunk_ms, in.hop_ms, total / duration,
                                                   static_cast<std::uint64_t>(flops / duration));
  out << report.to_text();
  write_manifest(beside(o.out), args, "stream", {{"model", to_json(model.config)}, {"chunk_ms", o.chunk_ms}},
                 model.config.seed, {{"output", o.out}, {"chunks", seconds.size()}});
  return kExitOk;
}

int cmd_verify(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  Model model = load_model(o);
  Tensor input;
  if (o.input.empty()) {
    Rng rng(o.seed.value_or(1));
    input = seeded_normal<float>(rng, {200, model.config.encoder.input_dim}, 0.0, 1.0);
  } else {
    input = read_features(o.input).frames;
  }
  const auto dev = verify_stream_equivalence(model, input, o.chunk_frames, Mode::Streaming, o.speaker);
  bool ok = true;
  json rows = json::array();
  for (std::size_t i = 0; i < dev.size(); ++i) {
    const bool pass = dev[i] <= o.tolerance;
    ok = ok && pass;
    out << "chunk_frames=" << o.chunk_frames[i] << " max_abs_diff=" << dev[i] << (pass ? " PASS" : " FAIL")
        << "\n";
    rows.push_back({{"chunk_frames", o.chunk_frames[i]}, {"max_abs_diff", dev[i]}});
  }
  if (!o.manifest.empty())
    write_manifest(o.manifest, args, "verify", {{"model", to_json(model.config)}, {"tolerance", o.tolerance}},
                   o.seed.value_or(1), {{"deviations", rows}, {"passed", ok}});
  return ok ? kExitOk : kExitVerification;
}

int cmd_bench(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  pin_to_single_core();
  Model model = load_model(o);
  const std::size_t chunk = chunk_frames_from_ms(o.chunk_ms, o.hop_ms);
  double rtf = 0.0;
  if (o.force_rtf) {
    rtf = *o.force_rtf;
    out << "rtf_source=forced\n";
  } else if (o.sleep_rtf) {
    const double secs = *o.sleep_rtf * static_cast<double>(o.frames) * o.hop_ms / 1000.0;
    const auto s = measure_rtf([secs] { std::this_thread::sleep_for(std::chrono::duration<double>(secs)); },
                               o.frames, o.hop_ms, o.reps);
    rtf = s.median;
    out << "rtf_source=sleep_stub\nrtf_min=" << s.min << "\nrtf_max=" << s.max << "\n";
  } else {
    const auto s = measure_model_rtf(model, Mode::Streaming, o.frames, o.hop_ms, o.reps, chunk);
    rtf = s.median;
    out << "rtf_source=measured\nrtf_min=" << s.min << "\nrtf_max=" << s.max << "\n";
  }
  const double duration = static_cast<double>(o.frames) * o.hop_ms / 1000.0;
  const double flops = static_cast<double>(count_flops(model.config, Mode::Streaming, o.frames));
  const LatencyReport report =
      make_latency_report(o.chunk_ms, o.hop_ms, rtf, static_cast<std::uint64_t>(flops / duration));
  out << report.to_text();
  if (!o.manifest.empty())
    write_manifest(o.manifest, args, "bench", {{"model", to_json(model.config)}, {"chunk_ms", o.chunk_ms}},
                   model.config.seed,
                   {{"rtf", rtf}, {"total_latency_ms", report.total_latency_ms},
                    {"flops_per_second", report.flops_per_second}});
  return kExitOk;
}

int cmd_gradcheck(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto entries = run_gradient_suite(1e-4);
  bool ok = true;
  json rows = json::array();
  char line[160];
  for (const auto& e : entries) {
    std::snprintf(line, sizeof(line), "%-32s coords=%-5zu max_rel_error=%.3e %s\n", e.name.c_str(),
                  e.coordinates, e.max_rel_error, e.passed ? "PASS" : "FAIL");
    out << line;
    ok = ok && e.passed;
    rows.push_back({{"name", e.name}, {"max_rel_error", e.max_rel_error}, {"passed", e.passed}});
  }
  if (!o.manifest.empty()) write_manifest(o.manifest, args, "gradcheck", json::object(), 0, {{"checks", rows}});
  return ok ? kExitOk : kExitVerification;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DualVC dual-mode voice conversion toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;

  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  };
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Override the seed"); };
  auto add_model = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--model", o.model, "Model checkpoint (.dvcm)")->check(CLI::ExistingFile);
    if (required) opt->required();
  };
  auto add_manifest = [&](CLI::App* c) { c->add_option("--manifest", o.manifest, "Write a run manifest here"); };

  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic corpus");
  add_config(synth);
  add_seed(synth);
  synth->add_option("--out", o.out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model on a corpus directory");
  add_config(train);
  add_seed(train);
  train->add_option("--data", o.data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", o.out, "Output checkpoint")->required();
  train->add_option("--steps", o.steps, "Override the number of steps");
  train->add_option("--log", o.log, "CSV loss log (default <out>.log.csv)");

  auto* convert = app.add_subcommand("convert", "Offline conversion of a feature file");
  add_model(convert, true);
  convert->add_option("--input", o.input, "Input feature file")->required()->check(CLI::ExistingFile);
  convert->add_option("--speaker", o.speaker, "Target speaker id")->required();
  convert->add_option("--mode", o.mode, "streaming or non-streaming")
      ->check(CLI::IsMember({"streaming", "non-streaming"}));
  convert->add_option("--out", o.out, "Output feature file")->required();

  auto* stream = app.add_subcommand("stream", "Chunked streaming conversion");
  add_model(stream, true);
  stream->add_option("--input", o.input, "Input feature file")->required()->check(CLI::ExistingFile);
  stream->add_option("--speaker", o.speaker, "Target speaker id")->required();
  stream->add_option("--chunk-ms", o.chunk_ms, "Chunk duration in ms")->check(CLI::PositiveNumber);
  stream->add_option("--out", o.out, "Output feature file")->required();

  auto* verify = app.add_subcommand("verify", "Check chunked streaming against offline streaming inference");
  add_model(verify, false);
  add_config(verify);
  add_seed(verify);
  add_manifest(verify);
  verify->add_option("--input", o.input, "Input feature file (default: 200 random frames)")
      ->check(CLI::ExistingFile);
  verify->add_option("--speaker", o.speaker, "Target speaker id");
  verify->add_option("--chunk-frames", o.chunk_frames, "Chunk sizes in frames")->delimiter(',');
  verify->add_option("--tolerance", o.tolerance, "Maximum allowed deviation");

  auto* bench = app.add_subcommand("bench", "Measure RTF and report latency and FLOPs");
  add_model(bench, false);
  add_config(bench);
  add_manifest(bench);
  bench->add_option("--chunk-ms", o.chunk_ms, "Chunk duration in ms")->check(CLI::PositiveNumber);
  bench->add_option("--hop-ms", o.hop_ms, "Frame hop in ms")->check(CLI::PositiveNumber);
  bench->add_option("--frames", o.frames, "Benchmark input length in frames")->check(CLI::PositiveNumber);
  bench->add_option("--reps", o.reps, "Timed repetitions (>= 3)");
  auto* force = bench->add_option("--force-rtf", o.force_rtf, "Skip measurement and use this RTF");
  bench->add_option("--sleep-rtf", o.sleep_rtf, "Time a stub that sleeps this fraction of real time")
      ->excludes(force);

  auto* grad = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  add_manifest(grad);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  std::vector<std::string> full{"dualvc"};
  full.insert(full.end(), args.begin(), args.end());
  try {
    if (synth->parsed()) return cmd_synth_data(o, full, out);
    if (train->parsed()) return cmd_train(o, full, out);
    if (convert->parsed()) return cmd_convert(o, full, out);
    if (stream->parsed()) return cmd_stream(o, full, out);
    if (verify->parsed()) return cmd_verify(o, full, out);
    if (bench->parsed()) return cmd_bench(o, full, out);
    if (grad->parsed()) return cmd_gradcheck(o, full, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace dualvc
