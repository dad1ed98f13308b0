#include "dan/toybars.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "bars file I/O assumes a little-endian host");

namespace dan {

std::string variant_name(BarsVariant v) {
  switch (v) {
    case BarsVariant::RedHorizontal: return "red-horizontal";
    case BarsVariant::RedVertical: return "red-vertical";
    case BarsVariant::GreenHorizontal: return "green-horizontal";
  }
  return "?";
}

BarsVariant variant_from_name(const std::string& name) {
  if (name == "red-horizontal") return BarsVariant::RedHorizontal;
  if (name == "red-vertical") return BarsVariant::RedVertical;
  if (name == "green-horizontal") return BarsVariant::GreenHorizontal;
  throw std::invalid_argument("unknown bars variant: " + name);
}

BarChannel variant_channel(BarsVariant v) {
  return v == BarsVariant::GreenHorizontal ? BarChannel::Green
                                           : BarChannel::Red;
}

BarOrientation variant_orientation(BarsVariant v) {
  return v == BarsVariant::RedVertical ? BarOrientation::Vertical
                                       : BarOrientation::Horizontal;
}

int bar_length_for_label(int label) {
  if (label < 0 || label >= kBarClasses)
    throw std::invalid_argument("bar label out of range");
  return 3 * (label + 3);
}

Tensor Dataset::batch_images(const std::vector<int>& indices) const {
  const int n = static_cast<int>(indices.size());
  Tensor batch = Tensor::zeros(
      {n, kBarChannels, kBarImageSize, kBarImageSize});
  const std::int64_t stride =
      static_cast<std::int64_t>(kBarChannels) * kBarImageSize * kBarImageSize;
  for (int i = 0; i < n; ++i)
    batch.data().segment(i * stride, stride) =
        examples.at(indices[i]).image.data();
  return batch;
}

std::vector<int> Dataset::batch_labels(const std::vector<int>& indices) const {
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i)
    labels[i] = examples.at(indices[i]).label;
  return labels;
}

static BarsExample make_example(int label, BarsVariant variant, int margin,
                                Rng& rng) {
  BarsExample ex;
  ex.label = label;
  ex.image = Tensor::zeros({kBarChannels, kBarImageSize, kBarImageSize});
  const int length = bar_length_for_label(label);
  const int channel = static_cast<int>(variant_channel(variant));
  std::uniform_int_distribution<int> cross_pos(margin,
                                               kBarImageSize - 1 - margin);
  std::uniform_int_distribution<int> fit_pos(0, kBarImageSize - length);
  if (variant_orientation(variant) == BarOrientation::Horizontal) {
    const int row = cross_pos(rng);
    const int col = fit_pos(rng);
    for (int j = 0; j < length; ++j)
      ex.image.set_at(std::array{channel, row, col + j}, 1.0);
  } else {
    const int col = cross_pos(rng);
    const int row = fit_pos(rng);
    for (int j = 0; j < length; ++j)
      ex.image.set_at(std::array{channel, row + j, col}, 1.0);
  }
  return ex;
}

TrainTestSplit gen_bars(const BarsConfig& cfg) {
  if (cfg.n_examples < kBarClasses)
    throw std::invalid_argument("gen_bars: need at least one example per class");
  if (cfg.split <= 0.0 || cfg.split >= 1.0)
    throw std::invalid_argument("gen_bars: split must lie in (0,1)");
  if (cfg.edge_margin < 0 || 2 * cfg.edge_margin >= kBarImageSize)
    throw std::invalid_argument("gen_bars: bad edge margin");

  Rng rng(cfg.seed);

  // Class-balanced to within one example: the first n%5 classes get the
  // remainder.
  std::vector<int> labels;
  labels.reserve(cfg.n_examples);
  const int base = cfg.n_examples / kBarClasses;
  const int extra = cfg.n_examples % kBarClasses;
  for (int c = 0; c < kBarClasses; ++c)
    for (int i = 0; i < base + (c < extra ? 1 : 0); ++i) labels.push_back(c);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<BarsExample> examples;
  examples.reserve(cfg.n_examples);
  for (int label : labels)
    examples.push_back(make_example(label, cfg.variant, cfg.edge_margin, rng));

  std::vector<int> order(cfg.n_examples);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const int n_train = static_cast<int>(cfg.n_examples * cfg.split);

  TrainTestSplit split;
  for (int i = 0; i < cfg.n_examples; ++i) {
    auto& side = i < n_train ? split.train : split.test;
    side.examples.push_back(std::move(examples[order[i]]));
  }
  return split;
}

Tensor make_bar_filter(BarOrientation orientation, BarChannel channel) {
  Tensor f = Tensor::zeros({kBarChannels, 5, 5});
  const int c = static_cast<int>(channel);
  for (int j = 0; j < 5; ++j) {
    if (orientation == BarOrientation::Horizontal)
      f.set_at(std::array{c, 2, j}, 1.0);
    else
      f.set_at(std::array{c, j, 2}, 1.0);
  }
  return f;
}

Eigen::Matrix3d corner_filter_v() {
  Eigen::Matrix3d v;
  v << 1, -1, 1,
      -1, -1, -1,
       1, -1, 1;
  return v;
}

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names = {
      "original",
      "original+learn",
      "transposed",
      "channel-switch",
      "channel-switch+noise",
      "channel-switch+clean-start",
      "channel-switch+learn",
  };
  return names;
}

static std::string canonical_scenario_name(const std::string& raw) {
  // Accept "channel switch + learn" for "channel-switch+learn".
  std::string out;
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : raw + "+") {
    if (ch == '+') {
      // trim
      std::size_t a = cur.find_first_not_of(' ');
      std::size_t b = cur.find_last_not_of(' ');
      std::string part =
          a == std::string::npos ? "" : cur.substr(a, b - a + 1);
      std::replace(part.begin(), part.end(), ' ', '-');
      parts.push_back(part);
      cur.clear();
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += '+';
    out += parts[i];
  }
  return out;
}

ScenarioSpec scenario_setup(const std::string& name) {
  const std::string key = canonical_scenario_name(name);
  ScenarioSpec s;
  s.name = key;
  if (key == "original") {
    s.variant = BarsVariant::RedHorizontal;
    s.first_layer_init = FirstLayerInit::FixedBar;
    s.first_layer_trainable = false;
  } else if (key == "original+learn") {
    s.variant = BarsVariant::RedHorizontal;
    s.first_layer_init = FirstLayerInit::FixedBar;
    s.first_layer_trainable = true;
  } else if (key == "transposed") {
    s.variant = BarsVariant::RedVertical;
    s.first_layer_init = FirstLayerInit::FixedBar;
    s.first_layer_trainable = false;
  } else if (key == "channel-switch") {
    s.variant = BarsVariant::GreenHorizontal;
    s.first_layer_init = FirstLayerInit::FixedBar;
    s.first_layer_trainable = false;
  } else if (key == "channel-switch+noise") {
    s.variant = BarsVariant::GreenHorizontal;
    s.first_layer_init = FirstLayerInit::FixedBarNoise;
    s.first_layer_trainable = false;
  } else if (key == "channel-switch+clean-start") {
    s.variant = BarsVariant::GreenHorizontal;
    s.first_layer_init = FirstLayerInit::RandomInit;
    s.first_layer_trainable = true;
  } else if (key == "channel-switch+learn") {
    s.variant = BarsVariant::GreenHorizontal;
    s.first_layer_init = FirstLayerInit::FixedBar;
    s.first_layer_trainable = true;
  } else {
    throw std::invalid_argument("unknown scenario: " + name);
  }
  // The domain-knowledge filter always matches the original dataset's
  // channel (red) and orientation (horizontal); the channel-switch datasets
  // are the orthogonal ones.
  s.filter_channel = BarChannel::Red;
  s.filter_orientation = BarOrientation::Horizontal;
  return s;
}

DanNetwork toy_network(Rng& rng, int num_classes, FirstLayerInit init,
                       BarOrientation filter_orientation,
                       BarChannel filter_channel, double noise_sigma) {
  DanNetwork net;

  Tensor w1;
  switch (init) {
    case FirstLayerInit::FixedBar:
      w1 = reshape(make_bar_filter(filter_orientation, filter_channel),
                   {1, kBarChannels, 5, 5});
      break;
    case FirstLayerInit::FixedBarNoise: {
      w1 = reshape(make_bar_filter(filter_orientation, filter_channel),
                   {1, kBarChannels, 5, 5});
      Tensor noise = Tensor::randn({1, kBarChannels, 5, 5}, rng, noise_sigma);
      w1.data() += noise.data();
      break;
    }
    case FirstLayerInit::RandomInit:
      w1 = Tensor::randn({1, kBarChannels, 5, 5}, rng,
                         std::sqrt(2.0 / (kBarChannels * 25)));
      break;
  }
  w1.set_requires_grad(true);
  net.add_conv(FilterBank(w1, Tensor::zeros({1}, true)));
  net.add_relu();
  net.add_maxpool();

  Tensor w2 = Tensor::randn({20, 1, 5, 5}, rng, std::sqrt(2.0 / 25), true);
  net.add_conv(FilterBank(w2, Tensor::zeros({20}, true)));
  net.add_relu();
  net.add_maxpool();
  net.add_flatten();

  Head head;
  head.layers.push_back({Tensor::randn({320, 50}, rng, std::sqrt(2.0 / 320), true),
                         Tensor::zeros({50}, true)});
  head.layers.push_back({Tensor::randn({50, num_classes}, rng,
                                       std::sqrt(2.0 / 50), true),
                         Tensor::zeros({num_classes}, true)});
  net.set_base_head(std::move(head));
  return net;
}

DanNetwork toy_network_for_scenario(const ScenarioSpec& spec, Rng& rng) {
  return toy_network(rng, kBarClasses, spec.first_layer_init,
                     spec.filter_orientation, spec.filter_channel,
                     spec.noise_sigma);
}

namespace {

constexpr char kBarsMagic[4] = {'B', 'A', 'R', 'S'};
constexpr std::uint32_t kBarsVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error("bars file truncated");
  return value;
}

}  // namespace

void save_bars(const Dataset& ds, const std::filesystem::path& path,
               const BarsConfig& cfg) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os.write(kBarsMagic, 4);
  write_pod(os, kBarsVersion);
  write_pod(os, static_cast<std::uint32_t>(ds.size()));
  write_pod(os, static_cast<std::uint32_t>(kBarChannels));
  write_pod(os, static_cast<std::uint32_t>(kBarImageSize));
  write_pod(os, static_cast<std::uint32_t>(kBarImageSize));
  std::vector<float> buf(static_cast<std::size_t>(kBarChannels) *
                         kBarImageSize * kBarImageSize);
  for (const BarsExample& ex : ds.examples) {
    write_pod(os, static_cast<std::uint8_t>(ex.label));
    for (std::size_t i = 0; i < buf.size(); ++i)
      buf[i] = static_cast<float>(ex.image.data()[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             buf.size() * sizeof(float));
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());

  std::ofstream cfg_os(path.string() + ".cfg");
  cfg_os << "variant=" << variant_name(cfg.variant) << "\n"
         << "n_examples=" << cfg.n_examples << "\n"
         << "split=" << cfg.split << "\n"
         << "seed=" << cfg.seed << "\n"
         << "edge_margin=" << cfg.edge_margin << "\n"
         << "count=" << ds.size() << "\n";
}

Dataset load_bars(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kBarsMagic, 4) != 0)
    throw std::runtime_error("bad magic in " + path.string());
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kBarsVersion)
    throw std::runtime_error("unsupported bars version " +
                             std::to_string(version));
  const auto count = read_pod<std::uint32_t>(is);
  const auto c = read_pod<std::uint32_t>(is);
  const auto h = read_pod<std::uint32_t>(is);
  const auto w = read_pod<std::uint32_t>(is);
  if (c != kBarChannels || h != kBarImageSize || w != kBarImageSize)
    throw std::runtime_error("unexpected bars dims in " + path.string());

  Dataset ds;
  ds.examples.reserve(count);
  std::vector<float> buf(static_cast<std::size_t>(c) * h * w);
  for (std::uint32_t i = 0; i < count; ++i) {
    BarsExample ex;
    ex.label = read_pod<std::uint8_t>(is);
    is.read(reinterpret_cast<char*>(buf.data()), buf.size() * sizeof(float));
    if (!is) throw std::runtime_error("bars file truncated");
    ex.image = Tensor::zeros({kBarChannels, kBarImageSize, kBarImageSize});
    for (std::size_t j = 0; j < buf.size(); ++j) ex.image.data()[j] = buf[j];
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace dan
