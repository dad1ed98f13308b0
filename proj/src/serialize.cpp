#include "dan/serialize.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

namespace dan {

using nlohmann::json;

namespace {

constexpr char kBlobMagic[4] = {'D', 'A', 'N', 'W'};
constexpr std::uint32_t kBlobVersion = 1;
constexpr std::uint32_t kManifestVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;

std::string mode_name(ControllerMode mode) {
  return mode == ControllerMode::Diagonal ? "diagonal" : "linear";
}

ControllerMode mode_from_name(const std::string& name) {
  if (name == "diagonal") return ControllerMode::Diagonal;
  if (name == "linear") return ControllerMode::Linear;
  throw ArchiveError(ArchiveErrorCode::Inconsistent,
                     "unknown controller mode: " + name);
}

json architecture_json(const DanNetwork& net) {
  json layers = json::array();
  for (const Layer& layer : net.features) {
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      layers.push_back({{"kind", "conv"},
                        {"out", conv->base.out_channels()},
                        {"in", conv->base.in_channels()},
                        {"k", conv->base.kernel()},
                        {"stride", conv->stride},
                        {"padding", conv->padding},
                        {"controllable", conv->controllable},
                        {"frozen", conv->base.frozen}});
    } else if (std::get_if<ReluLayer>(&layer)) {
      layers.push_back({{"kind", "relu"}});
    } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
      layers.push_back({{"kind", "maxpool"},
                        {"window", pool->window},
                        {"stride", pool->stride}});
    } else if (std::get_if<FlattenLayer>(&layer)) {
      layers.push_back({{"kind", "flatten"}});
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      layers.push_back({{"kind", "batchnorm"},
                        {"channels", bn->bank.channels()}});
    }
  }
  return layers;
}

void write_blob(const DanNetwork& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw ArchiveError(ArchiveErrorCode::IoError,
                       "cannot open " + path.string());
  os.write(kBlobMagic, 4);
  os.write(reinterpret_cast<const char*>(&kBlobVersion), 4);
  for (const NamedTensor& nt : net.named_tensors()) {
    const std::uint16_t name_len = static_cast<std::uint16_t>(nt.name.size());
    os.write(reinterpret_cast<const char*>(&name_len), 2);
    os.write(nt.name.data(), name_len);
    os.put(static_cast<char>(kDtypeF64));
    os.put(static_cast<char>(nt.tensor.rank()));
    for (int d : nt.tensor.dims()) {
      const std::uint32_t dim = static_cast<std::uint32_t>(d);
      os.write(reinterpret_cast<const char*>(&dim), 4);
    }
    os.write(reinterpret_cast<const char*>(nt.tensor.data().data()),
             nt.tensor.size() * sizeof(double));
  }
  if (!os)
    throw ArchiveError(ArchiveErrorCode::IoError,
                       "write failed: " + path.string());
}

struct BlobTensor {
  Shape dims;
  Eigen::ArrayXd data;
};

std::map<std::string, BlobTensor> read_blob(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw ArchiveError(ArchiveErrorCode::IoError,
                       "cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kBlobMagic, 4) != 0)
    throw ArchiveError(ArchiveErrorCode::BadMagic,
                       "bad magic in " + path.string());
  std::uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  if (!is)
    throw ArchiveError(ArchiveErrorCode::Truncated,
                       "truncated header in " + path.string());
  if (version != kBlobVersion)
    throw ArchiveError(ArchiveErrorCode::VersionMismatch,
                       "blob version " + std::to_string(version) +
                           " unsupported");

  std::map<std::string, BlobTensor> out;
  while (true) {
    std::uint16_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), 2);
    if (is.eof()) break;
    if (!is || is.gcount() != 2)
      throw ArchiveError(ArchiveErrorCode::Truncated, "truncated record");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint8_t dtype = 0, ndim = 0;
    is.read(reinterpret_cast<char*>(&dtype), 1);
    is.read(reinterpret_cast<char*>(&ndim), 1);
    if (!is) throw ArchiveError(ArchiveErrorCode::Truncated, "truncated record");
    if (dtype != kDtypeF32 && dtype != kDtypeF64)
      throw ArchiveError(ArchiveErrorCode::Inconsistent,
                         "unknown dtype tag for " + name);
    BlobTensor bt;
    std::int64_t numel = 1;
    for (int i = 0; i < ndim; ++i) {
      std::uint32_t dim = 0;
      is.read(reinterpret_cast<char*>(&dim), 4);
      if (!is)
        throw ArchiveError(ArchiveErrorCode::Truncated, "truncated dims");
      bt.dims.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    bt.data.resize(numel);
    if (dtype == kDtypeF64) {
      is.read(reinterpret_cast<char*>(bt.data.data()),
              numel * sizeof(double));
    } else {
      std::vector<float> buf(numel);
      is.read(reinterpret_cast<char*>(buf.data()), numel * sizeof(float));
      for (std::int64_t i = 0; i < numel; ++i) bt.data[i] = buf[i];
    }
    if (!is)
      throw ArchiveError(ArchiveErrorCode::Truncated,
                         "truncated data for " + name);
    out.emplace(std::move(name), std::move(bt));
  }
  return out;
}

}  // namespace

void save_model(const DanNetwork& net, const std::filesystem::path& path) {
  if (net.heads.empty())
    throw ArchiveError(ArchiveErrorCode::Inconsistent,
                       "cannot save a network with no tasks");
  json manifest;
  manifest["format_version"] = kManifestVersion;
  manifest["architecture"] = architecture_json(net);

  json tasks = json::array();
  for (int t = 0; t < net.task_count(); ++t) {
    json task;
    task["name"] = net.task_names.at(t);
    task["head_frozen"] = net.heads[t].frozen;
    if (t == 0) {
      task["controller_mode"] = nullptr;
    } else {
      ControllerMode mode = ControllerMode::Linear;
      for (const Layer& layer : net.features)
        if (const auto* conv = std::get_if<ConvLayer>(&layer))
          if (conv->controllable) {
            mode = conv->controllers.at(t - 1).mode;
            break;
          }
      task["controller_mode"] = mode_name(mode);
    }
    json head_dims = json::array();
    for (const Head::Fc& fc : net.heads[t].layers)
      head_dims.push_back({fc.w.dim(0), fc.w.dim(1)});
    task["head_dims"] = head_dims;
    tasks.push_back(task);
  }
  manifest["tasks"] = tasks;
  manifest["base_frozen"] = net.base_frozen;
  manifest["alpha"] = {
      {"binding",
       net.alpha.binding == AlphaSelector::Binding::Decider ? "decider"
                                                            : "manual"},
      {"values", std::vector<double>(net.alpha.alphas.data(),
                                     net.alpha.alphas.data() +
                                         net.alpha.alphas.size())}};
  manifest["blob"] = path.filename().string() + ".bin";

  std::ofstream os(path);
  if (!os)
    throw ArchiveError(ArchiveErrorCode::IoError,
                       "cannot open " + path.string());
  os << manifest.dump(2) << "\n";
  if (!os)
    throw ArchiveError(ArchiveErrorCode::IoError,
                       "write failed: " + path.string());

  write_blob(net, path.string() + ".bin");
}

DanNetwork load_model(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is)
    throw ArchiveError(ArchiveErrorCode::IoError,
                       "cannot open " + path.string());
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw ArchiveError(ArchiveErrorCode::Inconsistent,
                       "manifest parse error: " + std::string(e.what()));
  }
  if (!manifest.contains("format_version") ||
      manifest["format_version"].get<std::uint32_t>() != kManifestVersion)
    throw ArchiveError(ArchiveErrorCode::VersionMismatch,
                       "unsupported manifest version");

  DanNetwork net;
  const int n_tasks = static_cast<int>(manifest["tasks"].size());
  if (n_tasks < 1)
    throw ArchiveError(ArchiveErrorCode::Inconsistent, "no tasks in manifest");

  // Skeleton from the architecture description.
  for (const json& jl : manifest["architecture"]) {
    const std::string kind = jl["kind"];
    if (kind == "conv") {
      const int co = jl["out"], ci = jl["in"], k = jl["k"];
      FilterBank base(Tensor::zeros({co, ci, k, k}, true),
                      Tensor::zeros({co}, true));
      base.frozen = jl["frozen"];
      net.add_conv(std::move(base), jl["stride"].get<int>(),
                   jl["padding"].get<int>(), jl["controllable"].get<bool>());
      if (jl["controllable"].get<bool>()) {
        auto* conv = std::get_if<ConvLayer>(&net.features.back());
        for (int t = 1; t < n_tasks; ++t) {
          ControllerModule ctrl;
          ctrl.mode =
              mode_from_name(manifest["tasks"][t]["controller_mode"]);
          ctrl.layer_ref =
              "features." + std::to_string(net.features.size() - 1);
          const int co = conv->base.out_channels();
          ctrl.W = Tensor::zeros({co, co}, true);
          ctrl.b_a = Tensor::zeros({co}, true);
          conv->controllers.push_back(std::move(ctrl));
        }
      }
    } else if (kind == "relu") {
      net.add_relu();
    } else if (kind == "maxpool") {
      net.add_maxpool(jl["window"].get<int>(), jl["stride"].get<int>());
    } else if (kind == "flatten") {
      net.add_flatten();
    } else if (kind == "batchnorm") {
      net.add_batchnorm(jl["channels"].get<int>());
      auto* bn = std::get_if<BatchNormLayer>(&net.features.back());
      for (int t = 1; t < n_tasks; ++t) bn->bank.add_task();
    } else {
      throw ArchiveError(ArchiveErrorCode::Inconsistent,
                         "unknown layer kind: " + kind);
    }
  }

  for (int t = 0; t < n_tasks; ++t) {
    const json& jt = manifest["tasks"][t];
    Head head;
    for (const json& jd : jt["head_dims"]) {
      const int din = jd[0], dout = jd[1];
      head.layers.push_back(
          {Tensor::zeros({din, dout}, true), Tensor::zeros({dout}, true)});
    }
    head.frozen = jt["head_frozen"];
    if (t == 0) {
      net.set_base_head(std::move(head), jt["name"]);
    } else {
      net.heads.push_back(std::move(head));
      net.task_names.push_back(jt["name"]);
    }
  }

  const auto alpha_values =
      manifest["alpha"]["values"].get<std::vector<double>>();
  if (static_cast<int>(alpha_values.size()) != n_tasks)
    throw ArchiveError(ArchiveErrorCode::Inconsistent,
                       "alpha length != task count");
  net.alpha.alphas = Eigen::Map<const Eigen::VectorXd>(alpha_values.data(),
                                                       alpha_values.size());
  net.alpha.binding = manifest["alpha"]["binding"] == "decider"
                          ? AlphaSelector::Binding::Decider
                          : AlphaSelector::Binding::Manual;
  net.base_frozen = manifest["base_frozen"];

  // Fill tensors from the blob; the name sets must agree exactly.
  const std::filesystem::path blob_path =
      path.parent_path() / manifest["blob"].get<std::string>();
  auto blob = read_blob(blob_path);
  std::size_t used = 0;
  for (NamedTensor& nt : net.named_tensors()) {
    auto it = blob.find(nt.name);
    if (it == blob.end())
      throw ArchiveError(ArchiveErrorCode::Inconsistent,
                         "blob is missing tensor " + nt.name);
    if (it->second.dims != nt.tensor.dims())
      throw ArchiveError(ArchiveErrorCode::Inconsistent,
                         "dims mismatch for " + nt.name);
    nt.tensor.data() = it->second.data;
    ++used;
  }
  if (used != blob.size())
    throw ArchiveError(ArchiveErrorCode::Inconsistent,
                       "blob contains tensors unknown to the manifest");
  return net;
}

}  // namespace dan
