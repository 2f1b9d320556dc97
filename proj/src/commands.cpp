#include "evssl/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "evssl/formats.hpp"
#include "evssl/metrics.hpp"

namespace evssl {

namespace fs = std::filesystem;

namespace {

const std::string kFlowPrefix = "flownet.";
const std::string kReconPrefix = "reconnet.";

fs::path prepare_output(const RunConfig& config) {
  const fs::path dir = config.output_dir.empty() ? fs::path(".") : fs::path(config.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory " + dir.string());
  return dir;
}

void write_config(const fs::path& dir, const RunConfig& config) {
  const std::string text = config.to_text();
  write_atomic(dir / "config.txt", [&](std::ostream& out) { out << text; });
}

void write_losses(const fs::path& path, const std::vector<TrainStep>& steps) {
  write_atomic(path, [&](std::ostream& out) {
    out << "step,term,value\n";
    char buffer[64];
    for (const TrainStep& s : steps) {
      for (const auto& [term, value] : s.report.terms) {
        std::snprintf(buffer, sizeof(buffer), "%.17g", value);
        out << s.step << ',' << term << ',' << buffer << '\n';
      }
      std::snprintf(buffer, sizeof(buffer), "%.17g", s.report.total);
      out << s.step << ",total," << buffer << '\n';
    }
  });
}

// Optimizer moments and counters live next to the weights, under "adam.<net>.".
void add_adam(Checkpoint& checkpoint, const std::string& net, const AdamState& adam) {
  for (const auto& [name, m] : adam.moments) {
    const auto n = m.first.size();
    checkpoint.tensors.emplace_back("adam." + net + "m." + name, Tensor(Shape{n}, m.first));
    checkpoint.tensors.emplace_back("adam." + net + "v." + name, Tensor(Shape{n}, m.second));
  }
  checkpoint.tensors.emplace_back("adam." + net + "step", Tensor::scalar(static_cast<double>(adam.step)));
}

AdamState load_adam(const Checkpoint& checkpoint, const std::string& net) {
  AdamState adam;
  const std::string m_prefix = "adam." + net + "m.", v_prefix = "adam." + net + "v.";
  for (const auto& [name, tensor] : checkpoint.tensors) {
    if (name.starts_with(m_prefix)) adam.moments[name.substr(m_prefix.size())].first = tensor.values();
    if (name.starts_with(v_prefix)) adam.moments[name.substr(v_prefix.size())].second = tensor.values();
    if (name == "adam." + net + "step") adam.step = static_cast<std::uint64_t>(tensor.item());
  }
  return adam;
}

// Checkpoint without optimizer entries, as load_parameters() expects per prefix.
Checkpoint weights_only(const Checkpoint& checkpoint) {
  Checkpoint out;
  for (const auto& entry : checkpoint.tensors) {
    if (!entry.first.starts_with("adam.")) out.tensors.push_back(entry);
  }
  out.config = checkpoint.config;
  out.step = checkpoint.step;
  return out;
}

std::vector<Sequence> split_sequences(const std::vector<EventPartition>& partitions,
                                      const std::vector<FlowField>& gt_flow, std::size_t length) {
  std::vector<Sequence> dataset;
  const std::size_t n = partitions.size();
  const std::size_t step = length == 0 ? std::max<std::size_t>(n, 1) : length;
  for (std::size_t begin = 0; begin < n; begin += step) {
    const std::size_t end = std::min(n, begin + step);
    Sequence s;
    s.partitions.assign(partitions.begin() + static_cast<std::ptrdiff_t>(begin),
                        partitions.begin() + static_cast<std::ptrdiff_t>(end));
    if (!gt_flow.empty()) {
      s.gt_flow.assign(gt_flow.begin() + static_cast<std::ptrdiff_t>(begin),
                       gt_flow.begin() + static_cast<std::ptrdiff_t>(end));
    }
    dataset.push_back(std::move(s));
  }
  return dataset;
}

std::vector<fs::path> indexed_files(const fs::path& dir, const std::string& stem, const std::string& extension) {
  std::vector<fs::path> files;
  for (std::size_t i = 0;; ++i) {
    fs::path p = dir / indexed_name(stem, i, extension);
    if (!fs::exists(p)) break;
    files.push_back(std::move(p));
  }
  return files;
}

std::vector<FlowField> load_flows(const std::string& dir, std::size_t expected) {
  const auto files = indexed_files(dir, "flow", ".flo");
  if (files.size() != expected) {
    throw ConfigError("expected " + std::to_string(expected) + " flow files in " + dir + ", found " +
                      std::to_string(files.size()));
  }
  std::vector<FlowField> flows;
  for (const auto& f : files) flows.push_back(read_flo(f));
  return flows;
}

std::vector<EventPartition> require_partitions(const RunConfig& config) {
  auto partitions = load_partitions(config);
  if (partitions.empty()) throw ConfigError("the event input yields no complete partition");
  return partitions;
}

}  // namespace

std::string indexed_name(const std::string& stem, std::size_t index, const std::string& extension) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "_%04zu", index);
  return stem + buffer + extension;
}

SyntheticScene scene_from_config(const RunConfig& config) {
  SyntheticScene scene;
  scene.geometry = {config.width, config.height};
  validate(scene.geometry);
  if (config.pattern == "checkerboard") {
    scene.pattern = checkerboard_pattern(scene.geometry, config.period, config.amplitude);
  } else if (config.pattern == "blobs") {
    scene.pattern = gaussian_blobs_pattern(scene.geometry, config.blob_count, config.blob_sigma,
                                           config.train.seed, config.amplitude);
  } else if (config.pattern == "image") {
    if (config.pattern_image.empty()) throw ConfigError("pattern = image needs pattern_image");
    Image unit = to_unit_image(read_netpbm(config.pattern_image));
    if (unit.rows() != config.height || unit.cols() != config.width) {
      throw ConfigError("pattern_image size must match width x height");
    }
    scene.pattern = log_intensity_pattern(unit);
  } else {
    throw ConfigError("unknown pattern '" + config.pattern + "'");
  }
  scene.vx = config.vx;
  scene.vy = config.vy;
  scene.contrast = config.contrast;
  scene.duration = config.duration;
  return scene;
}

EventStream load_events(const RunConfig& config) {
  if (config.events.empty()) throw ConfigError("no event file given (set events = PATH)");
  const fs::path path(config.events);
  if (!fs::exists(path)) throw ConfigError("event file " + path.string() + " does not exist");
  if (path.extension() == ".txt") return read_text_events(path, SensorGeometry{config.width, config.height});
  return read_binary_events(path);
}

std::vector<EventPartition> load_partitions(const RunConfig& config) {
  const EventStream stream = load_events(config);
  const std::size_t n = events_per_pixel_count(stream.geometry, config.train.events_per_pixel);
  auto partitions = partition_by_count(stream, n);
  for (auto& p : partitions) p = normalize_timestamps(std::move(p));
  return partitions;
}

void cmd_synth(const RunConfig& config) {
  config.validate();
  const SyntheticScene scene = scene_from_config(config);
  const double timestep = config.timestep > 0.0 ? config.timestep : suggested_timestep(scene);
  const EventStream stream = generate_events(scene, timestep);

  const fs::path dir = prepare_output(config);
  const fs::path gt = dir / "gt";
  fs::create_directories(gt);
  write_atomic(dir / "events.evt1",
               [&](std::ostream& out) { encode_binary_events(out, stream.geometry, stream.events); });

  const std::size_t n = events_per_pixel_count(stream.geometry, config.train.events_per_pixel);
  const auto partitions = partition_by_count(stream, n);
  for (std::size_t i = 0; i < partitions.size(); ++i) {
    write_flo(gt / indexed_name("flow", i, ".flo"), ground_truth_flow(scene, partitions[i]));
    write_netpbm(gt / indexed_name("frame", i, ".pgm"),
                 quantize(normalize_intensity(ground_truth_frame(scene, partitions[i]))));
  }
  RunConfig resolved = config;
  resolved.timestep = timestep;
  write_config(dir, resolved);
  std::cout << "synth: " << stream.events.size() << " events, " << partitions.size() << " partitions of "
            << n << " -> " << dir.string() << "\n";
}

void cmd_train_flow(const RunConfig& config) {
  config.validate();
  const auto partitions = require_partitions(config);
  const Dataset dataset = split_sequences(partitions, {}, config.sequence_length);

  FireFlowNet net(config.train.bins, config.train.flow_scale);
  std::mt19937_64 rng(config.train.seed);
  net.init(rng);
  AdamState adam;
  if (!config.checkpoint.empty()) {
    const Checkpoint resume = load_checkpoint(config.checkpoint);
    load_parameters(weights_only(resume), kFlowPrefix, net.parameters());
    adam = load_adam(resume, kFlowPrefix);
  }

  const TrainLog log = train_flow(dataset, config.train, net, adam);

  const fs::path dir = prepare_output(config);
  Checkpoint checkpoint;
  add_parameters(checkpoint, kFlowPrefix, net.parameters());
  add_adam(checkpoint, kFlowPrefix, adam);
  checkpoint.config = config.to_text();
  checkpoint.step = adam.step;
  save_checkpoint(dir / "flownet.ckp", checkpoint);
  write_losses(dir / "losses.csv", log.flow);
  write_config(dir, config);
  std::cout << "train-flow: " << log.flow.size() << " steps, now at step " << adam.step << "\n";
}

void cmd_train_recon(const RunConfig& config) {
  config.validate();
  const auto partitions = require_partitions(config);
  std::vector<FlowField> gt_flow;
  if (config.flow_source == "gt") {
    if (config.gt_flow_dir.empty()) throw ConfigError("flow_source = gt needs gt_flow_dir");
    gt_flow = load_flows(config.gt_flow_dir, partitions.size());
  }
  const Dataset dataset = split_sequences(partitions, gt_flow, config.sequence_length);

  std::mt19937_64 rng(config.train.seed);
  ReconNet net(config.train.bins);
  net.init(rng);
  FireFlowNet flownet(config.train.bins, config.train.flow_scale);
  flownet.init(rng);
  AdamState adam, flow_adam;

  std::optional<Checkpoint> resume;
  if (!config.checkpoint.empty()) {
    resume = load_checkpoint(config.checkpoint);
    load_parameters(weights_only(*resume), kReconPrefix, net.parameters());
    adam = load_adam(*resume, kReconPrefix);
  }

  FlowSource source;
  if (config.flow_source == "gt") {
    source.provider = ground_truth_flow_provider();
  } else {
    if (resume && has_prefix(*resume, kFlowPrefix)) {
      load_parameters(weights_only(*resume), kFlowPrefix, flownet.parameters());
      flow_adam = load_adam(*resume, kFlowPrefix);
    } else if (!config.flow_checkpoint.empty()) {
      load_parameters(weights_only(load_checkpoint(config.flow_checkpoint)), kFlowPrefix, flownet.parameters());
    } else if (config.flow_source == "checkpoint") {
      throw ConfigError("flow_source = checkpoint needs flow_checkpoint");
    }
    if (config.flow_source == "joint") {
      source.joint = &flownet;
      source.joint_adam = &flow_adam;
    } else {
      const int bins = config.train.bins;
      source.provider = [&flownet, bins](const Sequence&, std::size_t, const EventPartition& input,
                                         const AugmentationRecord&) {
        NoGradGuard no_grad;
        return flownet.forward(build_voxel_grid(input, bins));
      };
    }
  }

  const TrainLog log = train_recon(dataset, config.train, net, adam, source);

  const fs::path dir = prepare_output(config);
  Checkpoint checkpoint;
  add_parameters(checkpoint, kReconPrefix, net.parameters());
  add_adam(checkpoint, kReconPrefix, adam);
  if (config.flow_source != "gt") {
    add_parameters(checkpoint, kFlowPrefix, flownet.parameters());
    if (config.flow_source == "joint") add_adam(checkpoint, kFlowPrefix, flow_adam);
  }
  checkpoint.config = config.to_text();
  checkpoint.step = adam.step;
  save_checkpoint(dir / "reconnet.ckp", checkpoint);
  write_losses(dir / "losses.csv", log.recon);
  if (config.flow_source == "joint") write_losses(dir / "flow_losses.csv", log.flow);
  write_config(dir, config);
  std::cout << "train-recon: " << log.recon.size() << " updates, now at step " << adam.step;
  if (log.skipped_sequences) std::cout << ", " << log.skipped_sequences << " sequences skipped";
  std::cout << "\n";
}

void cmd_infer(const RunConfig& config) {
  config.validate();
  if (config.checkpoint.empty()) throw ConfigError("infer needs checkpoint = PATH");
  const Checkpoint checkpoint = weights_only(load_checkpoint(config.checkpoint));
  const bool has_flow = has_prefix(checkpoint, kFlowPrefix);
  const bool has_recon = has_prefix(checkpoint, kReconPrefix);
  if (!has_flow && !has_recon) throw FormatError("checkpoint holds neither a FlowNet nor a ReconNet");

  FireFlowNet flownet(config.train.bins, config.train.flow_scale);
  ReconNet reconnet(config.train.bins);
  if (has_flow) load_parameters(checkpoint, kFlowPrefix, flownet.parameters());
  if (has_recon) load_parameters(checkpoint, kReconPrefix, reconnet.parameters());

  const auto partitions = load_partitions(config);
  const fs::path dir = prepare_output(config);
  write_config(dir, config);
  if (partitions.empty()) {
    std::cerr << "warning: the event input yields no complete partition; nothing to infer\n";
    return;
  }

  NoGradGuard no_grad;
  if (has_flow) {
    for (std::size_t i = 0; i < partitions.size(); ++i) {
      const FlowField flow = flow_field(flownet.forward(build_voxel_grid(partitions[i], config.train.bins)));
      write_flo(dir / indexed_name("flow", i, ".flo"), flow);
      if (config.color) write_netpbm(dir / indexed_name("flow", i, ".ppm"), flow_color_code(flow));
    }
  }
  if (has_recon) {
    const auto frames = reconstruct_sequence(reconnet, partitions);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      write_netpbm(dir / indexed_name("frame", i, ".pgm"), quantize(normalize_intensity(frames[i])));
    }
  }
  std::cout << "infer: " << partitions.size() << " partitions -> " << dir.string() << "\n";
}

void cmd_eval(const RunConfig& config) {
  config.validate();
  if (config.predictions_dir.empty()) throw ConfigError("eval needs predictions_dir");
  const auto flow_files = indexed_files(config.predictions_dir, "flow", ".flo");
  const auto frame_files = indexed_files(config.predictions_dir, "frame", ".pgm");

  std::optional<std::vector<EventPartition>> partitions;
  if (!config.events.empty()) partitions = load_partitions(config);

  const std::size_t n = std::max(flow_files.size(), frame_files.size());
  if (n == 0) throw ConfigError("no predictions found in " + config.predictions_dir);
  if (!flow_files.empty() && !frame_files.empty() && flow_files.size() != frame_files.size()) {
    throw ConfigError("prediction count mismatch between flow and frame files");
  }
  if (partitions && partitions->size() != n) {
    throw ConfigError("count mismatch: " + std::to_string(n) + " predictions vs " +
                      std::to_string(partitions->size()) + " partitions");
  }

  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows(n);
  const bool do_fwl = partitions && !flow_files.empty();
  const bool do_flow = !config.gt_flow_dir.empty() && !flow_files.empty();
  const bool do_frames = !config.gt_frames_dir.empty() && !frame_files.empty();
  if (!do_fwl && !do_flow && !do_frames) throw ConfigError("nothing to evaluate: no matching ground truth or events");
  if (do_fwl) columns.push_back("fwl");
  if (do_flow) columns.insert(columns.end(), {"aee", "outlier_percent"});
  if (do_frames) columns.insert(columns.end(), {"mse", "ssim"});

  std::vector<FlowField> gt_flow;
  if (do_flow) gt_flow = load_flows(config.gt_flow_dir, n);
  std::vector<fs::path> gt_frames;
  if (do_frames) {
    gt_frames = indexed_files(config.gt_frames_dir, "frame", ".pgm");
    if (gt_frames.size() != n) {
      throw ConfigError("count mismatch: " + std::to_string(n) + " predictions vs " +
                        std::to_string(gt_frames.size()) + " ground-truth frames");
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    std::optional<FlowField> flow;
    if (!flow_files.empty()) flow = read_flo(flow_files[i]);
    if (do_fwl) rows[i].push_back(fwl((*partitions)[i], *flow));
    if (do_flow) {
      EventMask valid = EventMask::Constant(flow->height(), flow->width(), true);
      if (partitions) valid = event_mask(build_voxel_grid((*partitions)[i], config.train.bins));
      const FlowMetrics m = flow_metrics(*flow, gt_flow[i], valid);
      rows[i].insert(rows[i].end(), {m.aee, m.outlier_percent});
    }
    if (do_frames) {
      const FrameMetrics m = frame_metrics(to_unit_image(read_netpbm(frame_files[i])),
                                           to_unit_image(read_netpbm(gt_frames[i])));
      rows[i].insert(rows[i].end(), {m.mse, m.ssim});
    }
  }

  std::vector<double> means(columns.size(), 0.0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) means[c] += row[c] / static_cast<double>(n);
  }

  const fs::path dir = prepare_output(config);
  write_atomic(dir / "eval.csv", [&](std::ostream& out) {
    char buffer[64];
    out << "partition";
    for (const auto& c : columns) out << ',' << c;
    out << '\n';
    auto emit = [&](const std::string& label, const std::vector<double>& values) {
      out << label;
      for (double v : values) {
        std::snprintf(buffer, sizeof(buffer), "%.17g", v);
        out << ',' << buffer;
      }
      out << '\n';
    };
    for (std::size_t i = 0; i < n; ++i) emit(std::to_string(i), rows[i]);
    emit("mean", means);
  });
  write_config(dir, config);

  std::cout << "eval: " << n << " partitions";
  for (std::size_t c = 0; c < columns.size(); ++c) std::cout << ", mean " << columns[c] << " " << means[c];
  std::cout << "\n";
}

}  // namespace evssl
