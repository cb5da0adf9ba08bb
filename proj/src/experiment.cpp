#include "eqsplit/experiment.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "eqsplit/checkpoint.hpp"
#include "eqsplit/idx.hpp"
#include "eqsplit/qanalysis.hpp"

// keep the HTTP client header-only and plain-HTTP
#include <httplib.h>

namespace eqsplit {

namespace {

using nlohmann::json;

SplitRule parse_rule(const json& j) {
  SplitRule rule;
  if (j.contains("family")) {
    const std::string family = j.at("family");
    if (family == "bernoulli-rows")
      rule.family = SplitFamily::BernoulliRows;
    else if (family == "fixed-partition")
      rule.family = SplitFamily::FixedPartition;
    else
      throw std::invalid_argument("unknown split family: " + family);
  }
  rule.keep_prob = j.value("keep_prob", rule.keep_prob);
  rule.min_rows = j.value("min_rows", rule.min_rows);
  if (j.contains("partitions"))
    for (const auto& part : j.at("partitions"))
      rule.partitions.push_back(part.get<std::vector<Index>>());
  return rule;
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  const json j = json::parse(json_text);
  RunConfig config;
  config.schema_version = j.value("schema_version", 0);
  if (config.schema_version != kConfigSchemaVersion)
    throw std::invalid_argument("config schema_version must be " +
                                std::to_string(kConfigSchemaVersion));
  config.run_id = j.value("run_id", config.run_id);
  config.problem = j.value("problem", config.problem);
  config.noise_sigma = j.value("noise_sigma", 0.0);
  config.output_dir = j.value("output_dir", config.output_dir);

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    config.dataset.type = d.value("type", config.dataset.type);
    config.dataset.images_path = d.value("images", "");
    config.dataset.labels_path = d.value("labels", "");
    config.dataset.side = d.value("side", config.dataset.side);
    config.dataset.components = d.value("components", config.dataset.components);
    config.dataset.prior_seed = d.value("prior_seed", config.dataset.prior_seed);
    config.dataset.train_count = d.value("train_count", config.dataset.train_count);
    config.dataset.test_count = d.value("test_count", config.dataset.test_count);
  }
  if (j.contains("operator")) {
    const auto& o = j.at("operator");
    config.op.compression = o.value("compression", config.op.compression);
    config.op.keep_prob = o.value("keep_prob", config.op.keep_prob);
    config.op.accel = o.value("accel", config.op.accel);
    config.op.seed = o.value("seed", config.op.seed);
  }
  if (j.contains("group")) {
    const auto& g = j.at("group");
    config.group.kind = g.value("kind", config.group.kind);
    config.group.width = g.value("width", config.group.width);
    config.group.height = g.value("height", config.group.height);
    config.group.side = g.value("side", config.group.side);
    config.group.n = g.value("n", config.group.n);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    config.model.arch = m.value("arch", config.model.arch);
    config.model.channels = m.value("channels", config.model.channels);
    config.model.layers = m.value("layers", config.model.layers);
    config.model.hidden = m.value("hidden", config.model.hidden);
    config.model.equivariant = m.value("equivariant", config.model.equivariant);
    config.model.seed = m.value("seed", config.model.seed);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    config.loss_kind = l.value("kind", config.loss_kind);
    config.lambda = l.value("lambda", config.lambda);
    config.alpha = l.value("alpha", config.alpha);
    config.sure_probes = l.value("probes", config.sure_probes);
    if (l.contains("rule")) config.rule = parse_rule(l.at("rule"));
  }
  if (j.contains("eval")) {
    config.test_time_splits = j.at("eval").value("splits", Index{0});
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    config.train_options.epochs = t.value("epochs", config.train_options.epochs);
    config.train_options.batch_size = t.value("batch_size", config.train_options.batch_size);
    config.train_options.learning_rate = t.value("lr", config.train_options.learning_rate);
    config.train_options.seed = t.value("seed", config.train_options.seed);
    if (t.contains("schedule")) {
      const auto& s = t.at("schedule");
      config.train_options.schedule_epochs =
          s.value("milestones", std::vector<Index>{});
      config.train_options.schedule_factor = s.value("factor", 1.0);
    }
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

GroupAction build_group(const GroupSpec& spec) {
  if (spec.kind == "shift") return build_shift_group(spec.width, spec.height);
  if (spec.kind == "dihedral") return build_dihedral_group(spec.side);
  if (spec.kind == "trivial") return build_trivial_group(spec.n);
  throw std::invalid_argument("unknown group kind: " + spec.kind);
}

Eigen::MatrixXd sample_synthetic_prior(const DatasetSpec& spec, Index count, std::uint64_t seed) {
  const Index side = spec.side;
  const Index n = side * side;
  std::mt19937_64 component_rng(spec.prior_seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_int_distribution<Index> freq(1, 2);

  struct Component {
    Index fu1, fv1, fu2, fv2;
    double p1, p2, amp1, amp2, offset;
  };
  std::vector<Component> components;
  std::uniform_real_distribution<double> amp(0.1, 0.25);
  for (Index k = 0; k < spec.components; ++k) {
    components.push_back({freq(component_rng), freq(component_rng), freq(component_rng),
                          freq(component_rng), phase(component_rng), phase(component_rng),
                          amp(component_rng), amp(component_rng), 0.5});
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, spec.components - 1);
  std::uniform_int_distribution<Index> shift(0, side - 1);
  std::normal_distribution<double> normal;

  Eigen::MatrixXd images(n, count);
  for (Index i = 0; i < count; ++i) {
    const Component& c = components[pick(rng)];
    const Index su = shift(rng), sv = shift(rng);
    const double jitter = 0.03 * normal(rng);
    for (Index u = 0; u < side; ++u) {
      for (Index v = 0; v < side; ++v) {
        // random translation keeps the distribution exactly shift-invariant
        const double uu = static_cast<double>((u + su) % side);
        const double vv = static_cast<double>((v + sv) % side);
        double value = c.offset + jitter +
                       c.amp1 * std::sin(2.0 * std::numbers::pi * (c.fu1 * uu + c.fv1 * vv) /
                                             static_cast<double>(side) +
                                         c.p1) +
                       c.amp2 * std::cos(2.0 * std::numbers::pi * (c.fu2 * uu - c.fv2 * vv) /
                                             static_cast<double>(side) +
                                         c.p2);
        images(u * side + v, i) = std::min(1.0, std::max(0.0, value));
      }
    }
  }
  return images;
}

namespace {

Eigen::MatrixXd load_images(const DatasetSpec& spec, Index count, Index offset,
                            std::uint64_t seed) {
  if (spec.type == "mnist") {
    const MnistData data = load_mnist(spec.images_path, spec.labels_path);
    if (data.images.cols() < offset + count)
      throw std::runtime_error("mnist dataset smaller than requested slice");
    return data.images.middleCols(offset, count);
  }
  if (spec.type == "synthetic-prior") return sample_synthetic_prior(spec, count, seed);
  throw std::invalid_argument("unknown dataset type: " + spec.type);
}

}  // namespace

Problem build_problem(const RunConfig& config) {
  DatasetSpec dspec = config.dataset;
  Index width = 0, height = 0;
  if (dspec.type == "mnist") {
    width = 28;
    height = 28;
  } else {
    width = dspec.side;
    height = dspec.side;
  }
  const Index n = width * height;

  GroupSpec gspec = config.group;
  if (gspec.kind == "shift" && gspec.width == 0) {
    gspec.width = width;
    gspec.height = height;
  }
  if (gspec.kind == "dihedral" && gspec.side == 0) gspec.side = width;
  if (gspec.kind == "trivial" && gspec.n == 0) gspec.n = n;

  Problem problem{build_group(gspec), {}, {}, width, height};

  if (config.problem == "compressive-sensing") {
    const Index m = std::max<Index>(
        1, static_cast<Index>(std::llround(n * (1.0 - config.op.compression))));
    problem.op = make_gaussian_cs(m, n, config.op.seed);
  } else if (config.problem == "inpainting") {
    std::mt19937_64 rng(config.op.seed);
    std::bernoulli_distribution keep(config.op.keep_prob);
    std::vector<bool> mask(n);
    bool any = false;
    do {
      for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = keep(rng);
        any |= mask[i];
      }
    } while (!any);
    problem.op = make_inpainting(n, mask);
  } else if (config.problem == "dft-subsample") {
    std::mt19937_64 rng(config.op.seed);
    std::bernoulli_distribution keep(1.0 / config.op.accel);
    std::vector<bool> mask(n);
    mask[0] = true;  // always acquire DC
    for (std::size_t i = 1; i < mask.size(); ++i) mask[i] = keep(rng);
    problem.op = make_subsampled_dft(width, mask);
  } else {
    throw std::invalid_argument("unknown problem: " + config.problem);
  }

  const Eigen::MatrixXd train =
      load_images(dspec, dspec.train_count, 0, mix_seed(dspec.prior_seed, 1));
  const Eigen::MatrixXd test =
      load_images(dspec, dspec.test_count, dspec.train_count, mix_seed(dspec.prior_seed, 2));

  problem.data.op = nullptr;  // bound by the caller once the problem is stable
  problem.data.x = train;
  problem.data.x_val = test;
  problem.data.y.resize(problem.op.m, train.cols());
  for (Index i = 0; i < train.cols(); ++i)
    problem.data.y.col(i) =
        simulate(train.col(i), problem.op, config.noise_sigma, mix_seed(config.op.seed, 100 + i)).y;
  problem.data.y_val.resize(problem.op.m, test.cols());
  for (Index i = 0; i < test.cols(); ++i)
    problem.data.y_val.col(i) =
        simulate(test.col(i), problem.op, config.noise_sigma, mix_seed(config.op.seed, 5000 + i)).y;
  return problem;
}

std::shared_ptr<Reconstructor> build_model(const ModelSpec& spec, const Problem& problem) {
  ParametricSpec pspec;
  pspec.arch = spec.arch;
  pspec.width = problem.width;
  pspec.height = problem.height;
  pspec.channels = spec.channels;
  pspec.layers = spec.layers;
  pspec.hidden = spec.hidden;
  pspec.equivariant = spec.equivariant;
  pspec.seed = spec.seed;
  return make_parametric(pspec, &problem.action);
}

MetricRow evaluate_model(const Reconstructor& model, const Problem& problem,
                         const RunConfig& config, Index test_time_splits) {
  const Eigen::MatrixXd& x = problem.data.x_val;
  const Eigen::MatrixXd& y = problem.data.y_val;

  std::vector<double> psnrs, ssims;
  for (Index i = 0; i < y.cols(); ++i) {
    Eigen::VectorXd xhat;
    if (test_time_splits > 0) {
      xhat = test_time_average(model, y.col(i), problem.op, problem.action, config.rule,
                               test_time_splits, mix_seed(config.op.seed, 7000 + i), config.alpha,
                               config.noise_sigma);
    } else {
      xhat = model.apply(y.col(i), problem.op);
    }
    psnrs.push_back(psnr(xhat, x.col(i), 1.0));
    if (problem.width == problem.height)
      ssims.push_back(ssim(xhat, x.col(i), std::min<Index>(7, problem.width)));
  }

  auto mean_std = [](const std::vector<double>& values) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return std::pair<double, double>(mean, std::sqrt(var));
  };

  MetricRow row;
  row.run_id = config.run_id;
  row.split = "test";
  std::tie(row.psnr_mean, row.psnr_std) = mean_std(psnrs);
  if (!ssims.empty()) std::tie(row.ssim_mean, row.ssim_std) = mean_std(ssims);

  std::vector<Eigen::VectorXd> measurements;
  for (Index i = 0; i < y.cols(); ++i) measurements.push_back(y.col(i));
  row.equiv_db = equiv_metric(model, measurements, problem.op, problem.action,
                              mix_seed(config.op.seed, 31));
  return row;
}

RunResult run_experiment(const RunConfig& config) {
  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);

  Problem problem = build_problem(config);
  problem.data.op = &problem.op;

  auto model = build_model(config.model, problem);

  LossSpec spec;
  spec.kind = loss_kind_from_string(config.loss_kind);
  spec.lambda = config.lambda;
  spec.alpha = config.alpha;
  spec.sigma = config.noise_sigma;
  spec.rule = config.rule;
  spec.action = &problem.action;
  spec.sure_probes = config.sure_probes;

  RunResult result;
  result.history = train(*model, problem.data, spec, config.train_options);

  // per-epoch training curve
  {
    std::ofstream out(config.output_dir + "/history.csv");
    out << "run_id,epoch,loss,val_psnr\n";
    out.precision(10);
    for (std::size_t e = 0; e < result.history.epoch_loss.size(); ++e)
      out << config.run_id << ',' << e << ',' << result.history.epoch_loss[e] << ','
          << result.history.val_psnr[e] << '\n';
  }

  result.final_row = evaluate_model(*model, problem, config, config.test_time_splits);
  result.final_row.epoch = config.train_options.epochs;
  result.final_row.loss =
      result.history.epoch_loss.empty() ? 0.0 : result.history.epoch_loss.back();
  write_metrics_csv({result.final_row}, config.output_dir + "/metrics.csv");

  save_operator(problem.op, config.output_dir + "/operator.eqop");

  Checkpoint ckpt;
  ckpt.arch = config.model.arch;
  ckpt.dims = {problem.width, problem.height, config.model.channels, config.model.layers,
               config.model.equivariant ? Index{1} : Index{0}};
  ckpt.params = model->params() ? *model->params() : Eigen::VectorXd();
  result.checkpoint_path = config.output_dir + "/model.eqck";
  save_checkpoint(result.checkpoint_path, ckpt);
  return result;
}

// ---------------------------------------------------------------------------
// SHA-256 (FIPS 180-4), used to record dataset checksums.

namespace {

struct Sha256 {
  std::uint32_t state[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                            0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
  std::uint64_t total = 0;
  unsigned char buffer[64];
  std::size_t fill = 0;

  static constexpr std::uint32_t k[64] = {
      0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
      0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
      0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
      0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
      0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
      0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
      0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
      0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
      0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
      0xc67178f2};

  static std::uint32_t rotr(std::uint32_t x, int s) { return (x >> s) | (x << (32 - s)); }

  void process(const unsigned char* chunk) {
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(chunk[4 * i]) << 24) | (std::uint32_t(chunk[4 * i + 1]) << 16) |
             (std::uint32_t(chunk[4 * i + 2]) << 8) | std::uint32_t(chunk[4 * i + 3]);
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = state[0], b = state[1], c = state[2], d = state[3];
    std::uint32_t e = state[4], f = state[5], g = state[6], h = state[7];
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t t1 = h + s1 + ch + k[i] + w[i];
      const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = s0 + maj;
      h = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    state[0] += a;
    state[1] += b;
    state[2] += c;
    state[3] += d;
    state[4] += e;
    state[5] += f;
    state[6] += g;
    state[7] += h;
  }

  void update(const unsigned char* data, std::size_t length) {
    total += length;
    while (length > 0) {
      const std::size_t take = std::min(length, std::size_t{64} - fill);
      std::memcpy(buffer + fill, data, take);
      fill += take;
      data += take;
      length -= take;
      if (fill == 64) {
        process(buffer);
        fill = 0;
      }
    }
  }

  std::string hex_digest() {
    const std::uint64_t bits = total * 8;
    unsigned char pad = 0x80;
    update(&pad, 1);
    const unsigned char zero = 0;
    while (fill != 56) update(&zero, 1);
    unsigned char length_bytes[8];
    for (int i = 0; i < 8; ++i) length_bytes[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(length_bytes, 8);

    std::ostringstream out;
    for (std::uint32_t word : state)
      for (int shift = 24; shift >= 0; shift -= 8)
        out << "0123456789abcdef"[(word >> shift >> 4) & 0xf]
            << "0123456789abcdef"[(word >> shift) & 0xf];
    return out.str();
  }
};


std::string gunzip(const std::string& compressed) {
  z_stream strm{};
  if (inflateInit2(&strm, 16 + MAX_WBITS) != Z_OK)
    throw std::runtime_error("gunzip: inflateInit2 failed");
  std::string out;
  std::vector<unsigned char> chunk(1 << 16);
  strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
  strm.avail_in = static_cast<uInt>(compressed.size());
  int status = Z_OK;
  while (status != Z_STREAM_END) {
    strm.next_out = chunk.data();
    strm.avail_out = static_cast<uInt>(chunk.size());
    status = inflate(&strm, Z_NO_FLUSH);
    if (status != Z_OK && status != Z_STREAM_END) {
      inflateEnd(&strm);
      throw std::runtime_error("gunzip: corrupt stream");
    }
    out.append(reinterpret_cast<char*>(chunk.data()), chunk.size() - strm.avail_out);
  }
  inflateEnd(&strm);
  return out;
}

}  // namespace

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("sha256_file: cannot open " + path);
  Sha256 hash;
  std::vector<unsigned char> chunk(1 << 16);
  while (in) {
    in.read(reinterpret_cast<char*>(chunk.data()), static_cast<std::streamsize>(chunk.size()));
    hash.update(chunk.data(), static_cast<std::size_t>(in.gcount()));
  }
  return hash.hex_digest();
}

void fetch_mnist(const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);

  const char* files[] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                         "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};

  httplib::Client client("http://ossci-datasets.s3.amazonaws.com");
  client.set_connection_timeout(30);
  client.set_read_timeout(120);

  std::ofstream checksums(directory + "/checksums.txt");
  for (const char* name : files) {
    const std::string target = directory + "/" + name;
    if (!fs::exists(target)) {
      const std::string url = std::string("/mnist/") + name + ".gz";
      auto response = client.Get(url);
      if (!response || response->status != 200)
        throw std::runtime_error("fetch failed for " + url +
                                 (response ? " (status " + std::to_string(response->status) + ")"
                                           : " (no response)"));
      const std::string raw = gunzip(response->body);
      std::ofstream out(target, std::ios::binary);
      out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    }
    checksums << sha256_file(target) << "  " << name << '\n';
  }
}

}  // namespace eqsplit
