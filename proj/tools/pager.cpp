// pager: train, generate, super-resolve and evaluate from the command line.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 configuration error, 3 data
// error, 4 model load failure.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "pager/attributes.hpp"
#include "pager/datasets.hpp"
#include "pager/eval.hpp"
#include "pager/io.hpp"
#include "pager/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pager;

namespace {

struct ExitError : std::runtime_error {
  ExitError(int code, const std::string& msg) : std::runtime_error(msg), code(code) {}
  int code;
};

[[noreturn]] void config_error(const std::string& msg) { throw ExitError(2, msg); }
[[noreturn]] void data_error(const std::string& msg) { throw ExitError(3, msg); }

// ---------------------------------------------------------------------------
// Options
// ---------------------------------------------------------------------------

struct DataOptions {
  std::string dataset = "dir";
  std::string data;
  int resolution = 0;
  int channels = 3;
  std::size_t limit = 0;
};

struct ModelOptions {
  int core_gmm = 500;
  int dc_gmm = 100;
  int ac_gmm = 3;
  int lle_k = 2;
  int core_side = 0;
  bool unconditional = false;
  bool no_booster = false;
  std::uint64_t seed = 0;
  CLI::Option* core_gmm_opt = nullptr;
};

void add_data_options(CLI::App* cmd, DataOptions& o) {
  cmd->add_option("--dataset", o.dataset, "Dataset layout")
      ->check(CLI::IsMember({"mnist", "fashion", "celeba", "dir"}))
      ->capture_default_str();
  cmd->add_option("--data", o.data, "IDX directory (mnist, fashion) or image directory (celeba, dir)");
  cmd->add_option("--resolution", o.resolution,
                  "Training side; images are cropped and resized to it. 0 keeps 28 for IDX data and uses 32 otherwise")
      ->capture_default_str();
  cmd->add_option("--channels", o.channels, "Channels kept from image directories")
      ->check(CLI::IsMember({1, 3}))
      ->capture_default_str();
  cmd->add_option("--limit", o.limit, "Use only the first N training images (0 = all)")->capture_default_str();
}

void add_model_options(CLI::App* cmd, ModelOptions& o) {
  o.core_gmm_opt = cmd->add_option("--core-gmm", o.core_gmm,
                                   "Core GMM components (mnist and fashion default to 100 per class)")
                       ->check(CLI::PositiveNumber)
                       ->capture_default_str();
  cmd->add_option("--dc-gmm", o.dc_gmm, "Enhancer DC GMM components")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--ac-gmm", o.ac_gmm, "Enhancer AC GMM components per DC cluster")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--lle-k", o.lle_k, "Booster nearest neighbors")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--core-side", o.core_side, "Core resolution (0 = dataset preset: 16 for IDX data, 4 otherwise)")
      ->capture_default_str();
  cmd->add_flag("--unconditional", o.unconditional, "Train one core instead of one per class");
  cmd->add_flag("--no-booster", o.no_booster, "Skip the quality booster");
  cmd->add_option("--seed", o.seed, "Root seed")->capture_default_str();
}

bool is_idx(const std::string& dataset) { return dataset == "mnist" || dataset == "fashion"; }

PagerConfig make_config(const DataOptions& d, const ModelOptions& m) {
  PagerConfig cfg = is_idx(d.dataset) ? mnist_config() : celeba_config();
  cfg.dataset = d.dataset;
  if (!is_idx(d.dataset) || m.core_gmm_opt->count() > 0) cfg.core_components = m.core_gmm;
  if (m.core_side > 0) cfg.core_side = m.core_side;
  if (m.unconditional) cfg.per_class = false;
  cfg.enhancer.dc_components = m.dc_gmm;
  cfg.enhancer.ac_components = m.ac_gmm;
  cfg.booster.neighbors = m.lle_k;
  cfg.use_booster = !m.no_booster;
  cfg.seed = m.seed;
  if (!is_power_of_two(cfg.core_side) || cfg.core_side < 2) config_error("--core-side must be a power of two >= 2");
  return cfg;
}

std::string idx_file(const std::string& dir, const std::string& stem) {
  const fs::path p = fs::path(dir) / stem;
  if (!fs::exists(p)) data_error("missing " + p.string());
  return p.string();
}

LabeledImageSet load_training_set(const DataOptions& o) {
  if (o.data.empty()) config_error("--data is required");
  if (!fs::exists(o.data)) data_error("no such path: " + o.data);
  LabeledImageSet set;
  if (is_idx(o.dataset)) {
    if (o.resolution != 0 && o.resolution != 28) config_error("IDX data is 28x28; --resolution must be 0 or 28");
    set = load_idx(idx_file(o.data, "train-images-idx3-ubyte"), idx_file(o.data, "train-labels-idx1-ubyte"));
  } else {
    const int side = o.resolution > 0 ? o.resolution : 32;
    set = load_image_dir(o.data, side, o.channels);
  }
  if (o.limit > 0 && o.limit < set.size()) {
    set.images.resize(o.limit);
    if (!set.labels.empty()) set.labels.resize(o.limit);
    if (!set.names.empty()) set.names.resize(o.limit);
  }
  spdlog::info("loaded {} training images of {}x{}", set.size(), set.images.front().width(),
               set.images.front().height());
  return set;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& flag) {
  std::vector<int> out;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      config_error(flag + ": '" + tok + "' is not an integer");
    }
  }
  if (out.empty()) config_error(flag + " is empty");
  return out;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');)
    if (!tok.empty()) out.push_back(tok);
  return out;
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

struct LoadedModel {
  std::string kind;
  PagerModel model;
  AttributeFamily family;
};

LoadedModel load_any(const std::string& path) {
  try {
    const auto reader = ArchiveReader::load(path);
    LoadedModel out;
    out.kind = reader.has_meta("kind") ? reader.meta("kind") : "";
    if (out.kind == "family")
      out.family = family_from_archive(reader);
    else
      out.model = model_from_archive(reader);
    return out;
  } catch (const Error& e) {
    throw ExitError(4, "cannot load model " + path + ": " + e.what());
  }
}

PagerModel load_plain(const std::string& path) {
  auto m = load_any(path);
  if (m.kind == "family") config_error(path + " holds an attribute model family; this command needs a single model");
  return std::move(m.model);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f || !(f << text)) data_error("cannot write " + path);
}

void save_png(const ImageTensor& img, const std::string& path) {
  try {
    write_png(img, path);
  } catch (const Error& e) {
    data_error(e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct TrainArgs {
  DataOptions data;
  ModelOptions model;
  std::string attrs;
  std::string attr_names;
  int attr_clusters = 10;
  std::size_t min_cluster = 500;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  if (a.data.data.empty()) config_error("--data is required");
  if (a.out.empty()) config_error("--out is required");
  const PagerConfig cfg = make_config(a.data, a.model);
  if (!a.attrs.empty() && is_idx(a.data.dataset)) config_error("--attrs needs an image-directory dataset");
  auto set = load_training_set(a.data);

  if (a.attrs.empty()) {
    if (cfg.per_class && set.labels.empty()) config_error("per-class training needs labels; pass --unconditional");
    const auto model = train(set.images, set.labels, cfg);
    model_archive(model).save(a.out);
  } else {
    if (a.attr_clusters < 1) config_error("--attr-clusters must be >= 1");
    const auto names = a.attr_names.empty() ? celeba_default_attributes() : split_csv(a.attr_names);
    attach_attributes(set, load_celeba_attrs(a.attrs, names));
    const auto family = train_attribute_models(set.images, set.attrs, a.attr_clusters, cfg, a.min_cluster, names);
    family_archive(family).save(a.out);
  }
  spdlog::info("wrote {}", a.out);
  return 0;
}

struct GenerateArgs {
  std::string model;
  int count = 64;
  std::uint64_t seed = 0;
  std::string grid;
  std::string out = ".";
  std::string attributes;
  int label = -1;
};

std::pair<int, int> parse_grid(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) config_error("--grid must look like 8x8");
  const auto cols = parse_int_list(text.substr(0, x), "--grid"), rows = parse_int_list(text.substr(x + 1), "--grid");
  if (cols.size() != 1 || rows.size() != 1 || cols[0] < 1 || rows[0] < 1) config_error("--grid must look like 8x8");
  return {cols[0], rows[0]};
}

int cmd_generate(const GenerateArgs& a) {
  if (a.model.empty()) config_error("--model is required");
  if (a.count < 1) config_error("--count must be >= 1");
  std::pair<int, int> grid{0, 0};
  if (!a.grid.empty()) grid = parse_grid(a.grid);
  const auto loaded = load_any(a.model);

  std::vector<ImageTensor> images;
  Rng rng(a.seed);
  try {
    if (loaded.kind == "family") {
      if (a.attributes.empty()) config_error("this model is attribute-conditioned; pass --attributes");
      const auto q = parse_attribute_query(a.attributes, loaded.family.router.names);
      auto g = generate_with_attributes(loaded.family, q, rng, a.count);
      spdlog::info("query routed to centroid {} (model {})", g.center, g.model);
      images = std::move(g.images);
    } else {
      if (!a.attributes.empty()) config_error("--attributes needs a model trained with --attrs");
      images = a.label >= 0 ? generate_class(loaded.model, a.label, rng, a.count) : generate(loaded.model, rng, a.count);
    }
  } catch (const InvalidInput& e) {
    config_error(e.what());
  }

  fs::create_directories(a.out);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.png", i);
    save_png(images[i], (fs::path(a.out) / name).string());
  }
  if (grid.first > 0) {
    if (static_cast<std::size_t>(grid.first * grid.second) < images.size())
      spdlog::warn("grid {} holds fewer than {} images; the rest are left out", a.grid, images.size());
    save_png(make_grid(images, grid.first, grid.second), (fs::path(a.out) / "grid.png").string());
  }
  spdlog::info("wrote {} images to {}", images.size(), a.out);
  return 0;
}

struct SuperresArgs {
  std::string model;
  std::string in;
  int target = 0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_superres(const SuperresArgs& a) {
  if (a.model.empty() || a.in.empty() || a.out.empty()) config_error("--model, --in and --out are required");
  const auto model = load_plain(a.model);
  ImageTensor img;
  try {
    img = load_image(a.in);
  } catch (const Error& e) {
    data_error(e.what());
  }
  if (img.channels() != model.channels())
    config_error("input has " + std::to_string(img.channels()) + " channels; the model has " +
                 std::to_string(model.channels()));
  Rng rng(a.seed);
  ImageTensor out;
  try {
    out = super_resolve(model, img, a.target > 0 ? a.target : model.final_side(), rng);
  } catch (const InvalidInput& e) {
    config_error(e.what());
  }
  save_png(out, a.out);
  spdlog::info("{}x{} -> {}x{}, wrote {}", img.width(), img.height(), out.width(), out.height(), a.out);
  return 0;
}

/// Reference images: an IDX image file, an IDX directory (its t10k split),
/// or an image directory.
std::vector<ImageTensor> load_reference(const std::string& path, int side, int channels) {
  if (!fs::exists(path)) data_error("no such path: " + path);
  if (fs::is_regular_file(path)) return load_idx(path).images;
  if (fs::exists(fs::path(path) / "t10k-images-idx3-ubyte"))
    return load_idx((fs::path(path) / "t10k-images-idx3-ubyte").string()).images;
  return load_image_dir(path, side, channels).images;
}

/// Splits reference images into the comparison set (first n) and the
/// held-out remainder the proxy cascade is fitted on.
struct ProxySetup {
  std::vector<ImageTensor> real;
  SaabCascade cascade;
};

ProxySetup proxy_setup(std::vector<ImageTensor> reference, std::size_t count, std::size_t max_fit = 10000) {
  if (reference.size() < 4) data_error("need at least 4 reference images");
  const std::size_t n = std::min(count, reference.size() / 2);
  if (n < 2) config_error("--count must be >= 2");
  const std::size_t fit_end = std::min(reference.size(), n + max_fit);
  std::vector<ImageTensor> fit(reference.begin() + static_cast<std::ptrdiff_t>(n),
                               reference.begin() + static_cast<std::ptrdiff_t>(fit_end));
  reference.resize(n);
  ProxySetup s;
  s.cascade = fit_proxy_cascade(fit);
  s.real = pad_all(reference, s.cascade.width);
  spdlog::info("proxy cascade fitted on {} held-out images; {} reference images", fit.size(), n);
  return s;
}

struct EvalArgs {
  std::string model;
  std::string real;
  std::size_t count = 10000;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  if (a.model.empty() || a.real.empty()) config_error("--model and --real are required");
  const auto model = load_plain(a.model);
  auto reference = load_reference(a.real, model.output_side, model.channels());
  for (const auto& img : reference)
    if (img.width() != model.output_side || img.height() != model.output_side || img.channels() != model.channels())
      data_error("reference images do not match the model's output shape");
  const auto setup = proxy_setup(std::move(reference), a.count);

  Rng rng(a.seed);
  const auto gen = pad_all(generate(model, rng, static_cast<int>(a.count)), setup.cascade.width);
  const auto report = saab_frechet(setup.real, gen, setup.cascade);
  std::vector<ImageTensor> noise;
  Rng noise_rng(stream_seed(a.seed, 0x4e4f4953, 0));
  for (std::size_t i = 0; i < a.count; ++i) {
    ImageTensor img(model.output_side, model.output_side, model.channels());
    for (float& v : img.data()) v = static_cast<float>(noise_rng.uniform());
    noise.push_back(std::move(img));
  }
  const double noise_d = saab_frechet(setup.real, pad_all(noise, setup.cascade.width), setup.cascade).distance;

  std::ostringstream csv;
  csv.precision(10);
  csv << "model,n_real,n_gen,feature_dim,feature_source,proxy_frechet,noise_frechet,seed,fid\n";
  csv << fs::path(a.model).filename().string() << ',' << report.n_real << ',' << report.n_gen << ','
      << report.feature_dim << ',' << report.feature_source << ',' << report.distance << ',' << noise_d << ','
      << a.seed << ",\n";
  if (a.out.empty())
    std::cout << csv.str();
  else
    write_text(a.out, csv.str());
  spdlog::info("proxy Frechet {:.4f} (uniform noise {:.4f})", report.distance, noise_d);
  return 0;
}

struct SweepArgs {
  DataOptions data;
  ModelOptions model;
  std::string sizes = "1000,2000,5000,10000,20000,60000";
  std::string real;
  std::size_t count = 1000;
  std::string out;
};

int cmd_sweep(const SweepArgs& a) {
  const PagerConfig cfg = make_config(a.data, a.model);
  std::vector<std::size_t> sizes;
  for (int s : parse_int_list(a.sizes, "--sizes")) {
    if (s < 1) config_error("--sizes must be positive");
    sizes.push_back(static_cast<std::size_t>(s));
  }
  const auto set = load_training_set(a.data);
  if (cfg.per_class && set.labels.empty()) config_error("per-class training needs labels; pass --unconditional");
  for (std::size_t s : sizes)
    if (s > set.size()) config_error("sweep size " + std::to_string(s) + " exceeds the " + std::to_string(set.size()) +
                                     " available images");
  const int side = set.images.front().width();
  std::string real_path = a.real;
  if (real_path.empty()) {
    if (!is_idx(a.data.dataset)) config_error("--real is required for image-directory datasets");
    real_path = a.data.data;
  }
  const auto setup = proxy_setup(load_reference(real_path, side, set.images.front().channels()), a.count);
  SweepOptions opts;
  opts.generated = a.count;
  opts.generation_seed = a.model.seed;
  const auto rows = training_size_sweep(set.images, set.labels, sizes, cfg, setup.real, setup.cascade, opts);
  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  if (a.out.empty())
    std::cout << csv.str();
  else
    write_text(a.out, csv.str());
  return 0;
}

int cmd_info(const std::string& path) {
  const auto loaded = load_any(path);
  const auto print_model = [](const PagerModel& m, const std::string& indent) {
    std::cout << indent << "output side: " << m.output_side << ", channels: " << m.channels()
              << ", core side: " << m.core_side() << ", cores: " << m.cores.size() << ", stages: " << m.enhancers.size()
              << (m.boosters.empty() ? " (no booster)" : "") << '\n';
    for (const auto& [k, v] : m.metadata) std::cout << indent << "  " << k << " = " << v << '\n';
  };
  if (loaded.kind == "family") {
    const auto& f = loaded.family;
    std::cout << "attribute family: " << f.router.clusters() << " centroids, " << f.models.size() << " models\n";
    std::cout << "attributes:";
    for (const auto& n : f.router.names) std::cout << ' ' << n;
    std::cout << '\n';
    for (std::size_t m = 0; m < f.models.size(); ++m) {
      std::cout << "model " << m << " (" << f.model_sizes[m] << " images)\n";
      print_model(f.models[m], "  ");
    }
  } else {
    print_model(loaded.model, "");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive attribute-guided generation with successive subspace learning"};
  app.require_subcommand(1);
  app.fallthrough();
  app.get_formatter()->column_width(40);
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  bool deterministic = false;
  std::string log_level = "info";
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_flag("--deterministic", deterministic,
               "Fixed-order reductions (always in effect: results never depend on --threads)");
  app.add_option("--log-level", log_level, "Log verbosity")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model (or an attribute model family with --attrs)");
  add_data_options(train_cmd, train_args.data);
  add_model_options(train_cmd, train_args.model);
  train_cmd->add_option("--attrs", train_args.attrs, "CelebA attribute list (list_attr_celeba.txt)");
  train_cmd->add_option("--attr-names", train_args.attr_names, "Comma-separated attribute columns")
      ->default_str("Male,Smiling,Blond_Hair,Black_Hair,Wearing_Lipstick,Bangs,Young");
  train_cmd->add_option("--attr-clusters", train_args.attr_clusters, "Attribute k-means clusters")->capture_default_str();
  train_cmd->add_option("--min-cluster", train_args.min_cluster, "Clusters below this size are merged")
      ->capture_default_str();
  train_cmd->add_option("--out", train_args.out, "Model file to write");

  GenerateArgs gen_args;
  auto* gen_cmd = app.add_subcommand("generate", "Sample images as numbered PNGs and an optional grid");
  gen_cmd->add_option("--model", gen_args.model, "Model file");
  gen_cmd->add_option("--count", gen_args.count, "Images to generate")->capture_default_str();
  gen_cmd->add_option("--seed", gen_args.seed, "Root seed")->capture_default_str();
  gen_cmd->add_option("--grid", gen_args.grid, "Also write grid.png with COLSxROWS tiles, e.g. 8x8");
  gen_cmd->add_option("--out", gen_args.out, "Output directory")->capture_default_str();
  gen_cmd->add_option("--attributes", gen_args.attributes, "Attribute query such as \"+smiling,0hair,-male\"");
  gen_cmd->add_option("--label", gen_args.label, "Class to generate from a per-class model (-1 = sample by frequency)")
      ->capture_default_str();

  SuperresArgs sr_args;
  auto* sr_cmd = app.add_subcommand("superres", "Raise an image's resolution with the model's stages");
  sr_cmd->add_option("--model", sr_args.model, "Model file");
  sr_cmd->add_option("--in", sr_args.in, "Input PNG whose side is one of the model's stage sides");
  sr_cmd->add_option("--target", sr_args.target, "Output side (0 = the model's final side)")->capture_default_str();
  sr_cmd->add_option("--seed", sr_args.seed, "Root seed")->capture_default_str();
  sr_cmd->add_option("--out", sr_args.out, "Output PNG");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Saab-feature Frechet distance between generated and real images");
  eval_cmd->add_option("--model", eval_args.model, "Model file");
  eval_cmd->add_option("--real", eval_args.real, "IDX image file, IDX directory (t10k split) or image directory");
  eval_cmd->add_option("--count", eval_args.count, "Generated images and at most as many reference images")
      ->capture_default_str();
  eval_cmd->add_option("--seed", eval_args.seed, "Root seed")->capture_default_str();
  eval_cmd->add_option("--out", eval_args.out, "CSV report (stdout when omitted)");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Proxy distance and training time across training-set sizes");
  add_data_options(sweep_cmd, sweep_args.data);
  add_model_options(sweep_cmd, sweep_args.model);
  sweep_cmd->add_option("--sizes", sweep_args.sizes, "Comma-separated training sizes")->capture_default_str();
  sweep_cmd->add_option("--real", sweep_args.real, "Reference images (defaults to the t10k split of IDX data)");
  sweep_cmd->add_option("--count", sweep_args.count, "Generated and reference images per row")->capture_default_str();
  sweep_cmd->add_option("--out", sweep_args.out, "CSV file (stdout when omitted)");

  std::string info_model;
  auto* info_cmd = app.add_subcommand("info", "Print a model file's structure and metadata");
  info_cmd->add_option("model", info_model, "Model file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  spdlog::set_default_logger(spdlog::stderr_color_st("pager"));
  spdlog::set_level(spdlog::level::from_str(log_level));
  set_thread_count(threads);

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*gen_cmd) return cmd_generate(gen_args);
    if (*sr_cmd) return cmd_superres(sr_args);
    if (*eval_cmd) return cmd_eval(eval_args);
    if (*sweep_cmd) return cmd_sweep(sweep_args);
    if (*info_cmd) return cmd_info(info_model);
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const InvalidInput& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
