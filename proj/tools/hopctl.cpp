// hopctl: command-line front end for the hand-object prior library.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hop/config.hpp"
#include "hop/dataset.hpp"
#include "hop/diffusion.hpp"
#include "hop/error.hpp"
#include "hop/grasp.hpp"
#include "hop/hand_model.hpp"
#include "hop/latent_codec.hpp"
#include "hop/parallel.hpp"
#include "hop/recon.hpp"

namespace fs = std::filesystem;
using namespace hop;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string out = "out";
  std::string config;
  std::string skeleton;
  bool print_config = false;
};

// Flat config documents for the commands that do not own a library config type.
struct Settings {
  Json values;

  explicit Settings(Json defaults) : values(std::move(defaults)) {}

  void merge(const Json& j) {
    if (!j.is_object()) fail(ErrorCode::InvalidConfig, "config must be a JSON object");
    for (const auto& [k, v] : j.items()) {
      if (!values.contains(k)) fail(ErrorCode::InvalidConfig, "unknown config key '" + k + "'");
      if (v.type() != values[k].type() && !(v.is_number() && values[k].is_number()))
        fail(ErrorCode::InvalidConfig, "config key '" + k + "' has the wrong type");
      values[k] = v;
    }
  }
  template <class T>
  T get(const char* key) const {
    return values.at(key).get<T>();
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string numbered(const char* pattern, int n) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, n);
  return buf;
}

fs::path out_dir(const Globals& g) {
  std::error_code ec;
  fs::create_directories(g.out, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create output directory " + g.out + ": " + ec.message());
  return g.out;
}

HandSkeleton load_skeleton(const Globals& g) {
  if (g.skeleton.empty()) return HandSkeleton::canonical();
  return skeleton_from_json(read_json(g.skeleton));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
}

SdfGrid load_object(const std::string& path, int resolution) {
  if (path.ends_with(".hopg")) {
    SdfGrid g = read_hopg(path);
    require(g.channels() == 1, ErrorCode::ShapeMismatch, "object grid must have one channel");
    return g;
  }
  if (path.ends_with(".obj")) return mesh_to_sdf(read_obj(path), GridSpec::cube(resolution));
  fail(ErrorCode::InvalidArgument, "object must be a .obj mesh or a .hopg grid: " + path);
}

Settings settings(const Globals& g, Json defaults) {
  Settings s(std::move(defaults));
  if (!g.config.empty()) s.merge(read_json(g.config));
  return s;
}

bool maybe_print(const Globals& g, const Json& config) {
  if (!g.print_config) return false;
  std::cout << config.dump(2) << '\n';
  return true;
}

// ---------------------------------------------------------------------------

Json gen_data_defaults() {
  return {{"count", 30},         {"families", kShapeFamilies}, {"codec", "block"},
          {"resolution", 64},    {"max_retries", 20},          {"max_penetration", 0.003},
          {"contact_threshold", 0.0025}};
}

int cmd_gen_data(const Globals& g, const std::string& specs_file) {
  if (maybe_print(g, gen_data_defaults())) return 0;
  const Settings s = settings(g, gen_data_defaults());
  std::vector<SyntheticGraspSpec> specs;
  if (!specs_file.empty()) {
    const Json j = read_json(specs_file);
    if (!j.is_array()) fail(ErrorCode::InvalidConfig, "spec file must hold a JSON array");
    for (const auto& e : j) specs.push_back(grasp_spec_from_json(e));
  } else {
    const auto families = s.get<std::vector<std::string>>("families");
    require(!families.empty(), ErrorCode::InvalidConfig, "families must not be empty");
    const int count = s.get<int>("count");
    require(count >= 0, ErrorCode::InvalidConfig, "count must be >= 0");
    for (int i = 0; i < count; ++i)
      specs.push_back(make_family_spec(families[i % families.size()], mix_seed(g.seed, i)));
  }
  GenerationOptions opt;
  opt.spec = GridSpec::cube(s.get<int>("resolution"));
  opt.max_retries = s.get<int>("max_retries");
  opt.max_penetration = s.get<double>("max_penetration");
  opt.contact_threshold = s.get<double>("contact_threshold");
  const auto codec = make_codec(s.get<std::string>("codec"));
  const DatasetManifest m = build_dataset(specs, out_dir(g), load_skeleton(g), *codec, opt);
  std::printf("wrote %zu samples, %zu labels to %s\n", m.entries.size(), m.labels.size(), g.out.c_str());
  return 0;
}

Json fit_prior_defaults() { return {{"clusters", 4}}; }

int cmd_fit_prior(const Globals& g, const std::string& data) {
  if (maybe_print(g, fit_prior_defaults())) return 0;
  const Settings s = settings(g, fit_prior_defaults());
  const DatasetManifest m = read_manifest(data);
  const auto grids = load_dataset_grids(data);
  const TemplateBank bank = fit_empirical_bank(grids, m.labels, s.get<int>("clusters"), g.seed);
  bank.save(out_dir(g));
  std::printf("wrote bank with %zu templates, sigma0 %.6f\n", bank.templates.size(), bank.sigma0);
  return 0;
}

Json sample_defaults() {
  return {{"schedule_steps", 1000}, {"codec", "block"}, {"pose_fit_steps", 1000}, {"pose_init_flexion", 0.4}};
}

int cmd_sample(const Globals& g, const std::string& bank_path, const std::string& label, int seeds) {
  if (maybe_print(g, sample_defaults())) return 0;
  const Settings s = settings(g, sample_defaults());
  require(seeds >= 1, ErrorCode::InvalidArgument, "--seeds must be >= 1");
  const TemplateBank bank = TemplateBank::load(bank_path);
  const Condition c = label.empty() ? Condition::unconditional() : bank.condition(label);
  const NoiseSchedule sched = NoiseSchedule::linear(s.get<int>("schedule_steps"));
  const MixtureDenoiser den(bank, sched);
  const auto codec = make_codec(s.get<std::string>("codec"));
  const HandSkeleton skel = load_skeleton(g);
  const fs::path dir = out_dir(g);
  const GridSpec spec = bank.templates.front().grid.spec();
  PoseFitOptions fit;
  fit.steps = s.get<int>("pose_fit_steps");
  for (int n = 0; n < seeds; ++n) {
    const InteractionGrid x{ancestral_sample(den, sched, c, spec, kInteractionChannels, mix_seed(g.seed, n))};
    write_hopg(dir / numbered("sample_%03d.hopg", n), x.data);
    write_obj(dir / numbered("sample_%03d_object.obj", n), marching_cubes(codec->decode(latent_of(x))));
    const PoseFitResult p =
        pose_from_field(skel, hand_field_of(x), HandPose::uniform_flexion(s.get<double>("pose_init_flexion")), fit);
    write_json(dir / numbered("sample_%03d_pose.json", n), {{"pose", to_json(p.pose)}, {"residual", p.residual}});
  }
  std::printf("wrote %d samples to %s\n", seeds, g.out.c_str());
  return 0;
}

Json ranking_json(const std::vector<RankedGrasp>& ranked, const std::vector<std::string>& files, std::uint64_t seed) {
  Json r = Json::array();
  for (const auto& e : ranked) r.push_back({{"file", files[e.index]}, {"index", e.index}, {"score", e.score}});
  return {{"seed", seed}, {"ranking", r}};
}

struct GraspInputs {
  std::string object, bank, label;
  int resolution = 64;
};

int cmd_synth_grasp(const Globals& g, const GraspInputs& in, int seeds) {
  GraspConfig config;
  if (!g.config.empty()) config = grasp_config_from_json(read_json(g.config));
  if (maybe_print(g, to_json(config))) return 0;
  require(seeds >= 1, ErrorCode::InvalidArgument, "--seeds must be >= 1");
  const SdfGrid object = load_object(in.object, in.resolution);
  const TemplateBank bank = TemplateBank::load(in.bank);
  const NoiseSchedule sched = NoiseSchedule::linear(1000);
  const MixtureDenoiser den(bank, sched);
  BlockCodec codec;
  const HandSkeleton skel = load_skeleton(g);
  const GraspProblem problem{object, codec, den, sched, bank.condition(in.label), skel};
  const fs::path dir = out_dir(g);

  std::vector<GraspParams> grasps(seeds);
  std::vector<GraspResult> results(seeds);
  parallel_for(seeds, [&](std::size_t b, std::size_t e) {
    for (std::size_t n = b; n < e; ++n) {
      results[n] = synthesize_grasp(problem, mix_seed(g.seed, n), config);
      grasps[n] = refine_grasp(results[n].params, object, skel, config);
    }
  });

  std::string csv = "seed,initial_sds_loss,final_sds_loss,max_depth_mm,mean_depth_mm,volume_cm3,contact_ratio,"
                    "contact_area_cm2\n";
  std::vector<std::string> files;
  for (int n = 0; n < seeds; ++n) {
    const std::string name = numbered("grasp_%03d.json", n);
    files.push_back(name);
    const GraspMetrics m = grasp_metrics(grasps[n], object, skel, config);
    Json doc = to_json(grasps[n]);
    doc["seed"] = mix_seed(g.seed, n);
    doc["metrics"] = to_json(m);
    doc["initial_sds_loss"] = results[n].trace.initial_loss;
    doc["final_sds_loss"] = results[n].trace.final_loss;
    write_json(dir / name, doc);
    csv += std::to_string(n) + "," + fmt(results[n].trace.initial_loss) + "," + fmt(results[n].trace.final_loss) +
           "," + fmt(m.max_depth * 1e3) + "," + fmt(m.mean_depth * 1e3) + "," + fmt(m.volume) + "," +
           fmt(m.contact_ratio) + "," + fmt(m.contact_area) + "\n";
    const HandKinematics kin = pose_hand(skel, grasps[n].pose);
    write_obj(dir / numbered("hand_%03d.obj", n), hand_mesh(kin));
  }
  write_text(dir / "metrics.csv", csv);
  TriMesh obj = marching_cubes(object);
  write_obj(dir / "object.obj", obj);
  write_hopg(dir / "object.hopg", object);
  // Object meshes in each grasp's hand frame, next to the hand meshes.
  for (int n = 0; n < seeds; ++n) {
    TriMesh placed = obj;
    for (auto& v : placed.vertices) v = grasps[n].transform.apply(v);
    write_obj(dir / numbered("object_in_hand_%03d.obj", n), placed);
  }
  const auto ranked = rank_grasps(problem, grasps, g.seed, config.loss_estimate);
  write_json(dir / "ranked.json", ranking_json(ranked, files, g.seed));
  std::printf("wrote %d grasps to %s\n", seeds, g.out.c_str());
  return 0;
}

int cmd_rank(const Globals& g, const GraspInputs& in, const std::string& grasp_dir) {
  GraspConfig config;
  if (!g.config.empty()) config = grasp_config_from_json(read_json(g.config));
  if (maybe_print(g, to_json(config))) return 0;
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(grasp_dir)) {
    const std::string name = e.path().filename().string();
    if (name.starts_with("grasp_") && name.ends_with(".json")) files.push_back(name);
  }
  std::ranges::sort(files);
  if (files.empty()) fail(ErrorCode::InvalidArgument, "no grasp_*.json documents in " + grasp_dir);
  std::vector<GraspParams> grasps;
  for (const auto& f : files) grasps.push_back(grasp_from_json(read_json(fs::path(grasp_dir) / f)));
  const SdfGrid object = load_object(in.object, in.resolution);
  const TemplateBank bank = TemplateBank::load(in.bank);
  const NoiseSchedule sched = NoiseSchedule::linear(1000);
  const MixtureDenoiser den(bank, sched);
  BlockCodec codec;
  const HandSkeleton skel = load_skeleton(g);
  const GraspProblem problem{object, codec, den, sched, bank.condition(in.label), skel};
  const auto ranked = rank_grasps(problem, grasps, g.seed, config.loss_estimate);
  write_json(out_dir(g) / "ranked.json", ranking_json(ranked, files, g.seed));
  for (const auto& r : ranked) std::printf("%s %.6f\n", files[r.index].c_str(), r.score);
  return 0;
}

Json gen_clip_defaults() {
  return {{"family", "sphere-like"}, {"frames", 8}, {"resolution", 64}, {"image_resolution", 48}};
}

int cmd_gen_clip(const Globals& g) {
  if (maybe_print(g, gen_clip_defaults())) return 0;
  const Settings s = settings(g, gen_clip_defaults());
  const HandSkeleton skel = load_skeleton(g);
  BlockCodec codec;
  const SyntheticGraspSpec spec = make_family_spec(s.get<std::string>("family"), g.seed);
  GenerationOptions opt;
  opt.spec = GridSpec::cube(s.get<int>("resolution"));
  const GraspSample sample = generate_grasp_sample(spec, skel, codec, opt);
  const SceneParams gt = make_grasp_scene(spec, sample, s.get<int>("frames"), opt.spec);
  const ClipObservation clip = make_synthetic_clip(gt, skel, mix_seed(g.seed, 1), s.get<int>("image_resolution"));
  const fs::path dir = out_dir(g);
  write_clip(dir, clip);
  write_scene(dir, "ground_truth", gt);
  std::printf("wrote %zu-frame clip to %s\n", clip.frames.size(), g.out.c_str());
  return 0;
}

std::string recon_metrics_csv(const ReconMetrics& m) {
  std::string csv = "chamfer_mm,fscore_5mm,fscore_10mm,hand_frame_chamfer_mm,mean_mpjpe_mm\n";
  double mpjpe = 0.0;
  for (double v : m.mpjpe_mm) mpjpe += v / static_cast<double>(m.mpjpe_mm.size());
  csv += fmt(m.chamfer_mm) + "," + fmt(m.fscore_5) + "," + fmt(m.fscore_10) + "," + fmt(m.hand_frame_chamfer_mm) +
         "," + fmt(mpjpe) + "\n";
  return csv;
}

int cmd_recon_demo(const Globals& g, const std::string& clip_path, const std::string& bank_path,
                   const std::string& label, const std::string& gt_path) {
  ReconConfig config;
  config.seed = g.seed;
  if (!g.config.empty()) {
    config = recon_config_from_json(read_json(g.config));
    if (!read_json(g.config).contains("seed")) config.seed = g.seed;
  }
  if (maybe_print(g, to_json(config))) return 0;
  const ClipObservation clip = read_clip(clip_path);
  const TemplateBank bank = TemplateBank::load(bank_path);
  const NoiseSchedule sched = NoiseSchedule::linear(1000);
  const MixtureDenoiser den(bank, sched);
  BlockCodec codec;
  const HandSkeleton skel = load_skeleton(g);
  const ReconResult r = reconstruct_clip(clip, den, sched, bank.condition(label), codec, skel, config);
  const fs::path dir = out_dir(g);
  write_obj(dir / "object.obj", marching_cubes(r.scene.object));
  write_scene(dir, "scene", r.scene);
  const auto iou = clip_iou(r.scene, clip, skel, config.render);
  std::optional<ReconMetrics> metrics;
  if (!gt_path.empty()) metrics = recon_metrics(r.scene, read_scene(gt_path), skel);
  std::string csv = metrics ? "frame,silhouette_iou,mpjpe_mm\n" : "frame,silhouette_iou\n";
  for (std::size_t t = 0; t < iou.size(); ++t)
    csv += std::to_string(t) + "," + fmt(iou[t]) + (metrics ? "," + fmt(metrics->mpjpe_mm[t]) : "") + "\n";
  write_text(dir / "frames.csv", csv);
  std::string trace = "iteration,loss,reprojection,noise_bound\n";
  for (std::size_t i = 0; i < r.loss.size(); ++i)
    trace += std::to_string(i) + "," + fmt(r.loss[i]) + "," + fmt(r.reprojection[i]) + "," +
             fmt(r.noise_bound[i / config.noise_update_every]) + "\n";
  write_text(dir / "trace.csv", trace);
  if (metrics) write_text(dir / "metrics.csv", recon_metrics_csv(*metrics));
  std::printf("reconstructed %d frames in %d iterations\n", r.scene.frames(), r.iterations);
  return 0;
}

int cmd_metrics(const Globals& g, const std::string& pred, const std::string& gt) {
  if (maybe_print(g, Json::object())) return 0;
  const ReconMetrics m = recon_metrics(read_scene(pred), read_scene(gt), load_skeleton(g), 10000, g.seed);
  const std::string csv = recon_metrics_csv(m);
  write_text(out_dir(g) / "metrics.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_export_mesh(const Globals& g, const std::string& grid_path, const std::string& grasp_path) {
  if (maybe_print(g, Json::object())) return 0;
  if (grid_path.empty() && grasp_path.empty()) fail(ErrorCode::InvalidArgument, "give --grid and/or --grasp");
  const fs::path dir = out_dir(g);
  if (!grid_path.empty()) {
    const VoxelGrid grid = read_hopg(grid_path);
    const std::string stem = fs::path(grid_path).stem().string();
    if (grid.channels() == kInteractionChannels) {
      const InteractionGrid x{grid};
      write_obj(dir / (stem + "_object.obj"), marching_cubes(BlockCodec().decode(latent_of(x))));
      const PoseFitResult p = pose_from_field(load_skeleton(g), hand_field_of(x), HandPose::uniform_flexion(0.4));
      write_obj(dir / (stem + "_hand.obj"), hand_mesh(pose_hand(load_skeleton(g), p.pose)));
    } else {
      require(grid.channels() == 1, ErrorCode::ShapeMismatch, "grid must be an SDF or an interaction grid");
      write_obj(dir / (stem + ".obj"), marching_cubes(grid));
    }
  }
  if (!grasp_path.empty()) {
    const GraspParams p = grasp_from_json(read_json(grasp_path));
    write_obj(dir / (fs::path(grasp_path).stem().string() + "_hand.obj"), hand_mesh(pose_hand(load_skeleton(g), p.pose)));
  }
  return 0;
}

int cmd_validate(const std::string& manifest) {
  const auto problems = validate_manifest(manifest);
  for (const auto& p : problems) std::printf("%s\n", p.c_str());
  if (!problems.empty())
    fail(ErrorCode::IoFailure, std::to_string(problems.size()) + " problem(s) in " + manifest);
  std::printf("ok\n");
  return 0;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hopctl: hand-object interaction prior tools"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "seed for every stochastic step")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads, 0 = all cores")->capture_default_str();
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--config", g.config, "JSON config document for the command");
  app.add_option("--skeleton", g.skeleton, "JSON hand skeleton (default: built-in)");
  app.add_flag("--print-config", g.print_config, "print the command's default config and exit");

  std::string specs, data, bank, label, grasp_dir, clip, gt, pred, grid, grasp;
  int seeds = 1;
  GraspInputs gi;

  auto* gen = app.add_subcommand("gen-data", "generate a procedural grasp dataset");
  gen->add_option("--specs", specs, "JSON array of grasp specs (default: built-in families)");
  auto* fit = app.add_subcommand("fit-prior", "fit a template bank to a dataset");
  fit->add_option("--data", data, "dataset manifest");
  auto* smp = app.add_subcommand("sample", "draw interaction grids from the prior");
  smp->add_option("--bank", bank, "bank manifest");
  smp->add_option("--condition", label, "category label (default: unconditional)");
  smp->add_option("--seeds", seeds, "number of samples")->capture_default_str();
  auto* syn = app.add_subcommand("synth-grasp", "synthesize grasps for an object");
  auto* rnk = app.add_subcommand("rank", "rank grasp documents by prior plausibility");
  for (auto* c : {syn, rnk}) {
    c->add_option("--object", gi.object, "object mesh (.obj) or SDF grid (.hopg)");
    c->add_option("--bank", gi.bank, "bank manifest");
    c->add_option("--condition", gi.label, "category label");
    c->add_option("--resolution", gi.resolution, "SDF resolution for mesh objects")->capture_default_str();
  }
  syn->add_option("--seeds", seeds, "number of grasps")->capture_default_str();
  rnk->add_option("--grasps", grasp_dir, "directory of grasp_*.json documents");
  auto* rec = app.add_subcommand("recon-demo", "reconstruct a clip with the prior");
  rec->add_option("--clip", clip, "clip manifest");
  rec->add_option("--bank", bank, "bank manifest");
  rec->add_option("--condition", label, "category label");
  rec->add_option("--gt", gt, "ground-truth scene for metrics");
  auto* gcl = app.add_subcommand("gen-clip", "render a synthetic clip of a procedural grasp");
  auto* met = app.add_subcommand("metrics", "compare two reconstructed scenes");
  met->add_option("--pred", pred, "predicted scene JSON");
  met->add_option("--gt", gt, "ground-truth scene JSON");
  auto* exp = app.add_subcommand("export-mesh", "export meshes of grids and grasps");
  exp->add_option("--grid", grid, "HOPG grid (SDF or interaction)");
  exp->add_option("--grasp", grasp, "grasp document");
  auto* val = app.add_subcommand("validate", "check a dataset manifest and its files");
  val->add_option("--manifest", data, "dataset manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: code=InvalidArgument message=\"%s\"\n", escape(e.what()).c_str());
    return 2;
  }

  auto need = [&](const std::string& v, const char* flag) {
    if (v.empty() && !g.print_config) fail(ErrorCode::InvalidArgument, std::string(flag) + " is required");
  };
  try {
    set_thread_count(g.threads);
    if (gen->parsed()) return cmd_gen_data(g, specs);
    if (fit->parsed()) return need(data, "--data"), cmd_fit_prior(g, data);
    if (smp->parsed()) return need(bank, "--bank"), cmd_sample(g, bank, label, seeds);
    if (syn->parsed() || rnk->parsed()) {
      need(gi.object, "--object");
      need(gi.bank, "--bank");
      need(gi.label, "--condition");
      if (syn->parsed()) return cmd_synth_grasp(g, gi, seeds);
      need(grasp_dir, "--grasps");
      return cmd_rank(g, gi, grasp_dir);
    }
    if (rec->parsed()) {
      need(clip, "--clip");
      need(bank, "--bank");
      need(label, "--condition");
      return cmd_recon_demo(g, clip, bank, label, gt);
    }
    if (gcl->parsed()) return cmd_gen_clip(g);
    if (met->parsed()) return need(pred, "--pred"), need(gt, "--gt"), cmd_metrics(g, pred, gt);
    if (exp->parsed()) return cmd_export_mesh(g, grid, grasp);
    if (val->parsed()) return need(data, "--manifest"), cmd_validate(data);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: code=%s message=\"%s\"\n", std::string(to_string(e.code())).c_str(),
                 escape(e.what()).c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: code=IoFailure message=\"%s\"\n", escape(e.what()).c_str());
    return 1;
  }
  return 0;
}
