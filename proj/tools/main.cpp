#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "uret/eval.hpp"
#include "uret/tracker.hpp"
#include "uret/trainer.hpp"

using namespace uret;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string hex_hash(uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig build_config(const std::string& config_file, const std::vector<std::string>& overrides) {
  RunConfig rc;
  if (!config_file.empty()) rc.load_file(config_file);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    rc.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return rc;
}

std::vector<fs::path> dataset_sequence_dirs(const fs::path& data_dir) {
  std::vector<fs::path> dirs;
  if (fs::exists(data_dir / "manifest.json")) {
    json manifest = json::parse(read_text_file(data_dir / "manifest.json"));
    for (const auto& entry : manifest.at("sequences"))
      dirs.push_back(data_dir / entry.at("name").get<std::string>());
  } else {
    for (const auto& e : fs::directory_iterator(data_dir))
      if (e.is_directory() && fs::exists(e.path() / "groundtruth.txt")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) throw DataError("no sequences found under " + data_dir.string());
  return dirs;
}

std::vector<SequenceRecord> load_dataset(const fs::path& data_dir) {
  std::vector<SequenceRecord> out;
  for (const auto& dir : dataset_sequence_dirs(data_dir)) out.push_back(load_sequence(dir));
  return out;
}

std::string dataset_hash(const fs::path& data_dir) {
  if (fs::exists(data_dir / "manifest.json"))
    return hex_hash(fnv1a64(read_text_file(data_dir / "manifest.json")));
  std::string names;
  for (const auto& dir : dataset_sequence_dirs(data_dir)) names += dir.filename().string() + "\n";
  return hex_hash(fnv1a64(names));
}

void write_run_json(const fs::path& out_dir, const json& j) {
  write_file_atomic(out_dir / "run.json", j.dump(2) + "\n");
}

std::string format_box_line(const BoundingBox& b) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f", b.x, b.y, b.w, b.h);
  return buf;
}

int cmd_synth(const RunConfig& rc, const std::string& out, bool force) {
  const fs::path out_dir(out);
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
    throw DataError("output directory " + out + " is not empty (pass --force to overwrite)");
  fs::create_directories(out_dir);

  const int n = static_cast<int>(rc.get_int("synth.n_sequences"));
  const uint64_t base_seed = static_cast<uint64_t>(rc.get_int("synth.seed"));
  const auto misalign = rc.get_real_list("synth.misalign");
  if (misalign.size() != 3) throw ConfigError("synth.misalign expects dx,dy,dt");

  SynthConfig sc;
  sc.n_frames = static_cast<int>(rc.get_int("synth.n_frames"));
  sc.width = static_cast<int>(rc.get_int("synth.width"));
  sc.height = static_cast<int>(rc.get_int("synth.height"));
  sc.object_size = rc.get_real("synth.object_size");
  sc.speed = rc.get_real("synth.speed");
  sc.event_threshold = rc.get_real("synth.event_threshold");
  sc.misalign_dx = misalign[0];
  sc.misalign_dy = misalign[1];
  sc.misalign_dt = static_cast<int64_t>(misalign[2]);
  sc.noise = rc.get_real("synth.noise");
  sc.event_scale = rc.get_real("synth.event_scale");
  sc.sub_frames = static_cast<int>(rc.get_int("synth.sub_frames"));
  sc.frame_interval_us = rc.get_int("synth.frame_interval_us");

  json manifest;
  manifest["config_hash"] = hex_hash(rc.hash());
  manifest["misalign"] = {misalign[0], misalign[1], misalign[2]};
  manifest["sequences"] = json::array();
  // attribute tags cycle through a few plausible codes for report coverage
  const std::vector<std::vector<std::string>> attr_cycle = {
      {"FM", "BC"}, {"BC", "BOM"}, {"SV"}, {"NM", "BC"}};
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq%03d", i);
    SynthConfig si = sc;
    si.name = name;
    si.attributes = attr_cycle[static_cast<size_t>(i) % attr_cycle.size()];
    const uint64_t seed = base_seed + static_cast<uint64_t>(i);
    SequenceRecord rec = generate_synthetic_sequence(si, seed);
    write_sequence(rec, out_dir / name);
    manifest["sequences"].push_back({{"name", name},
                                     {"seed", seed},
                                     {"n_frames", si.n_frames},
                                     {"split", "train"},
                                     {"attributes", si.attributes}});
  }
  write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << n << " sequences to " << out << "\n";
  return 0;
}

int cmd_train(const RunConfig& rc, const std::string& data, const std::string& out) {
  const fs::path out_dir(out);
  fs::create_directories(out_dir);
  std::vector<SequenceRecord> dataset = load_dataset(data);

  ModelConfig mc = ModelConfig::from(rc);
  TrainConfig tc = TrainConfig::from(rc);
  auto model = TrackModel<double>::build(mc, tc.seed);

  std::string log;
  train_model(model, dataset, tc, [&](const std::string& line) {
    log += line + "\n";
    std::cout << line << "\n";
  });
  write_file_atomic(out_dir / "train_log.txt", log);

  CheckpointContent ckpt = checkpoint_from_store(model.store, mc.summary());
  ckpt.meta["config"] = rc.canonical_text();
  ckpt.meta["config_hash"] = hex_hash(rc.hash());
  ckpt.meta["steps"] = std::to_string(tc.steps);
  ckpt.meta["variant"] = mc.variant;
  save_checkpoint_file(out_dir / "checkpoint.bin", ckpt);

  json run;
  run["command"] = "train";
  run["config_hash"] = hex_hash(rc.hash());
  run["data_hash"] = dataset_hash(data);
  run["variant"] = mc.variant;
  run["steps"] = tc.steps;
  write_run_json(out_dir, run);
  std::cout << "checkpoint written to " << (out_dir / "checkpoint.bin").string() << "\n";
  return 0;
}

int cmd_track(const std::string& checkpoint, const std::string& data, const std::string& out,
              const std::vector<std::string>& overrides, int workers) {
  const fs::path out_dir(out);
  fs::create_directories(out_dir);

  CheckpointContent ckpt = load_checkpoint_file(checkpoint);
  RunConfig rc;
  {
    // checkpointed config is canonical "key = value" text
    const fs::path tmp = out_dir / ".ckpt_config.tmp";
    write_text_file(tmp, ckpt.meta.at("config"));
    rc.load_file(tmp);
    fs::remove(tmp);
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value");
    rc.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  ModelConfig mc = ModelConfig::from(rc);
  auto model = TrackModel<double>::build(mc, 0);
  load_into_store(ckpt, model.store, mc.summary());

  const auto dirs = dataset_sequence_dirs(data);
  std::vector<std::string> names(dirs.size());
  std::vector<double> fps_inclusive(dirs.size()), fps_model(dirs.size());
  std::atomic<size_t> next{0};
  std::vector<std::string> errors(dirs.size());

  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= dirs.size()) return;
      try {
        SequenceRecord seq = load_sequence(dirs[i]);
        names[i] = seq.name;
        SequenceRun run = run_sequence(model, seq);
        std::string traj, timing;
        double sum_total = 0, sum_model = 0;
        for (size_t f = 0; f < run.trajectory.size(); ++f) {
          traj += format_box_line(run.trajectory[f]) + "\n";
          char trow[80];
          std::snprintf(trow, sizeof(trow), "%.3f,%.3f", run.ms_total[f], run.ms_model[f]);
          timing += std::string(trow) + "\n";
          sum_total += run.ms_total[f];
          sum_model += run.ms_model[f];
        }
        write_file_atomic(out_dir / (seq.name + ".txt"), traj);
        write_file_atomic(out_dir / (seq.name + "_timing.txt"), timing);
        fps_inclusive[i] = 1000.0 * static_cast<double>(run.trajectory.size()) / sum_total;
        fps_model[i] = 1000.0 * static_cast<double>(run.trajectory.size()) / sum_model;
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(dirs.size())));
  std::vector<std::thread> threads;
  for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);

  json run;
  run["command"] = "track";
  run["config_hash"] = ckpt.meta.at("config_hash");
  run["data_hash"] = dataset_hash(data);
  run["variant"] = mc.variant;
  json fps = json::object();
  for (size_t i = 0; i < names.size(); ++i)
    fps[names[i]] = {{"fps_with_stacking", fps_inclusive[i]}, {"fps_model_only", fps_model[i]}};
  run["timing"] = fps;
  write_run_json(out_dir, run);
  for (size_t i = 0; i < names.size(); ++i)
    std::printf("%s: %.1f fps (model only %.1f fps)\n", names[i].c_str(), fps_inclusive[i],
                fps_model[i]);
  return 0;
}

int cmd_eval(const std::vector<std::string>& tracks, const std::string& data,
             const std::string& out, bool allow_mixed) {
  const fs::path out_dir(out);
  fs::create_directories(out_dir);
  std::vector<SequenceRecord> dataset = load_dataset(data);
  std::vector<const SequenceRecord*> seq_ptrs;
  for (const auto& s : dataset) seq_ptrs.push_back(&s);
  const std::string data_h = dataset_hash(data);

  std::map<std::string, OPEResult> results;
  std::map<std::string, std::map<std::string, OPEResult>> attr_results;
  for (const auto& tracks_dir : tracks) {
    const fs::path tdir(tracks_dir);
    const std::string tracker_name = tdir.filename().string();
    if (fs::exists(tdir / "run.json") && !allow_mixed) {
      json run = json::parse(read_text_file(tdir / "run.json"));
      if (run.contains("data_hash") && run["data_hash"] != data_h)
        throw DataError("tracks dir " + tracks_dir +
                        " was produced on a different dataset (pass --allow-mixed to override)");
    }
    std::vector<Trajectory> trajs;
    std::vector<std::string> missing;
    for (const auto& seq : dataset) {
      const fs::path tf = tdir / (seq.name + ".txt");
      if (!fs::exists(tf)) {
        missing.push_back(seq.name);
        continue;
      }
      Trajectory traj;
      for (const auto& line : split(read_text_file(tf), '\n')) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        auto fields = split(t, ',');
        if (fields.size() != 4) throw DataError("bad trajectory row '" + t + "' in " + tf.string());
        traj.push_back(BoundingBox{std::stod(fields[0]), std::stod(fields[1]),
                                   std::stod(fields[2]), std::stod(fields[3])});
      }
      trajs.push_back(std::move(traj));
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw DataError("tracks dir " + tracks_dir + " is missing trajectories for: " + list);
    }
    results[tracker_name] = ope_evaluate(trajs, seq_ptrs);
    attr_results[tracker_name] = attribute_report(trajs, seq_ptrs);
  }

  emit_plots(results, out_dir);

  std::string report;
  for (const auto& [name, r] : results) {
    char line[256];
    std::snprintf(line, sizeof(line), "%s: PR=%.4f NPR=%.4f SR=%.4f (%zu frames)\n", name.c_str(),
                  r.pr_at_20, r.npr, r.sr_auc, r.n_frames);
    report += line;
    for (const auto& [code, ar] : attr_results[name]) {
      std::snprintf(line, sizeof(line), "  [%s] PR=%.4f NPR=%.4f SR=%.4f (%zu frames)\n",
                    code.c_str(), ar.pr_at_20, ar.npr, ar.sr_auc, ar.n_frames);
      report += line;
    }
  }
  write_file_atomic(out_dir / "report.txt", report);
  std::cout << report;
  return 0;
}

int cmd_stack_preview(const std::string& events, int64_t t0, int64_t t1, int width, int height,
                      const std::string& out) {
  const fs::path ev_path(events);
  const EventFormat fmt =
      ev_path.extension() == ".bin" ? EventFormat::kBinaryPacked : EventFormat::kCsv;
  EventStream stream = parse_event_stream_file(ev_path, fmt);
  if (width > 0) stream.sensor_width = width;
  if (height > 0) stream.sensor_height = height;
  if (stream.sensor_width <= 0 || stream.sensor_height <= 0)
    throw DataError("empty event stream; pass --width/--height explicitly");
  if (t1 < 0) t1 = stream.t_end + 1;
  EventStream window = slice_events(stream, t0, t1);
  EventFrame frame = stack_events(window, stream.sensor_width, stream.sensor_height);
  write_ppm(out, normalize_event_frame(frame));
  std::cout << "stacked " << window.events.size() << " events into " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncertainty-aware RGB-event tracker"};
  app.require_subcommand(1);
  app.fallthrough();  // --config/--set may follow the subcommand

  std::string config_file;
  std::vector<std::string> overrides;
  app.add_option("--config", config_file, "configuration file (key = value lines)");
  app.add_option("--set", overrides, "override a config key (key=value, repeatable)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out;
  bool synth_force = false;
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_flag("--force", synth_force, "overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "train a tracker");
  std::string train_data, train_out;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "run output directory")->required();

  auto* track = app.add_subcommand("track", "run the tracker over a dataset");
  std::string track_ckpt, track_data, track_out;
  int track_workers = 1;
  track->add_option("--checkpoint", track_ckpt, "checkpoint file")->required();
  track->add_option("--data", track_data, "dataset directory")->required();
  track->add_option("--out", track_out, "trajectory output directory")->required();
  track->add_option("--workers", track_workers, "parallel sequences");

  auto* eval = app.add_subcommand("eval", "one-pass evaluation of trajectories");
  std::vector<std::string> eval_tracks;
  std::string eval_data, eval_out;
  bool allow_mixed = false;
  eval->add_option("--tracks", eval_tracks, "trajectory directory (repeatable)")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--out", eval_out, "report output directory")->required();
  eval->add_flag("--allow-mixed", allow_mixed, "permit mixed config/data hashes");

  auto* preview = app.add_subcommand("stack-preview", "render an event frame to an image");
  std::string pv_events, pv_out;
  int64_t pv_t0 = 0, pv_t1 = -1;
  int pv_w = 0, pv_h = 0;
  preview->add_option("--events", pv_events, "events.csv or events.bin")->required();
  preview->add_option("--out", pv_out, "output image (PPM)")->required();
  preview->add_option("--t0", pv_t0, "window start (us)");
  preview->add_option("--t1", pv_t1, "window end (us, exclusive)");
  preview->add_option("--width", pv_w, "sensor width override");
  preview->add_option("--height", pv_h, "sensor height override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(build_config(config_file, overrides), synth_out, synth_force);
    if (*train) return cmd_train(build_config(config_file, overrides), train_data, train_out);
    if (*track) return cmd_track(track_ckpt, track_data, track_out, overrides, track_workers);
    if (*eval) return cmd_eval(eval_tracks, eval_data, eval_out, allow_mixed);
    if (*preview) return cmd_stack_preview(pv_events, pv_t0, pv_t1, pv_w, pv_h, pv_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
