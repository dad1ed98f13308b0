#pragma once

#include "dan/network.hpp"
#include "dan/tensor.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dan {

inline constexpr int kBarImageSize = 28;
inline constexpr int kBarChannels = 3;
inline constexpr int kBarClasses = 5;  // lengths 3k, k in {3..7}

enum class BarsVariant { RedHorizontal, RedVertical, GreenHorizontal };
enum class BarChannel { Red = 0, Green = 1, Blue = 2 };
enum class BarOrientation { Horizontal, Vertical };

std::string variant_name(BarsVariant v);
BarsVariant variant_from_name(const std::string& name);
BarChannel variant_channel(BarsVariant v);
BarOrientation variant_orientation(BarsVariant v);

struct BarsConfig {
  BarsVariant variant = BarsVariant::RedHorizontal;
  int n_examples = 1000;
  double split = 0.75;
  std::uint64_t seed = 0;
  // Margin on the bar's cross-axis offset. The first-layer 5x5 bar filter
  // only responds through its center row under valid convolution, so bars
  // closer than 2 pixels to the parallel edges would be invisible to it and
  // unclassifiable by construction.
  int edge_margin = 2;
};

struct BarsExample {
  Tensor image;  // [3,28,28], bar pixels 1.0 in one channel
  int label = 0; // bar length is 3*(label+3)
};

struct Dataset {
  std::vector<BarsExample> examples;

  int size() const { return static_cast<int>(examples.size()); }
  /// Stacks examples [first, first+count) into a [count,3,28,28] batch.
  Tensor batch_images(const std::vector<int>& indices) const;
  std::vector<int> batch_labels(const std::vector<int>& indices) const;
};

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

int bar_length_for_label(int label);

/// Class-balanced (within one example) bar dataset with a random
/// train/test split; deterministic in cfg.seed.
TrainTestSplit gen_bars(const BarsConfig& cfg);

/// 5x5 filter with 1.0 along the center row (horizontal) or column
/// (vertical) of the chosen channel; [3,5,5].
Tensor make_bar_filter(BarOrientation orientation, BarChannel channel);

/// The 3x3 corner-detector filter used by the depth-efficiency
/// demonstration: +1 at corners and center ring pattern
/// [[+1,-1,+1],[-1,-1,-1],[+1,-1,+1]].
Eigen::Matrix3d corner_filter_v();

enum class FirstLayerInit { FixedBar, FixedBarNoise, RandomInit };

/// One toy experiment: dataset variant, first-layer initialization and
/// trainability, and run protocol.
struct ScenarioSpec {
  std::string name;
  BarsVariant variant = BarsVariant::RedHorizontal;
  FirstLayerInit first_layer_init = FirstLayerInit::FixedBar;
  bool first_layer_trainable = false;
  // Channel/orientation of the domain-knowledge filter; configurable because
  // only the match/mismatch physics matters, not the color label.
  BarChannel filter_channel = BarChannel::Red;
  BarOrientation filter_orientation = BarOrientation::Horizontal;
  double noise_sigma = 0.1;
  int epochs = 50;
  int trials = 20;
  int n_examples = 1000;
  double split = 0.75;
  int batch_size = 32;
  double learning_rate = 1e-3;
};

const std::vector<std::string>& scenario_names();

/// Scenario by name. Accepts the canonical slug ("channel-switch+learn")
/// or the spaced spelling ("channel switch + learn").
ScenarioSpec scenario_setup(const std::string& name);

/// The degenerate bars classifier:
/// conv(3->1,5x5) relu pool conv(1->20,5x5) relu pool flatten
/// fc(320->50) relu fc(50->5).
/// First conv weights start from `init`; remaining layers random.
DanNetwork toy_network(Rng& rng, int num_classes = kBarClasses,
                       FirstLayerInit init = FirstLayerInit::RandomInit,
                       BarOrientation filter_orientation =
                           BarOrientation::Horizontal,
                       BarChannel filter_channel = BarChannel::Red,
                       double noise_sigma = 0.1);

DanNetwork toy_network_for_scenario(const ScenarioSpec& spec, Rng& rng);

// Flat binary dataset files: magic "BARS", version u32, count u32,
// dims u32 x3, then per example label u8 + float32 image; all little-endian.
// A plain-text key=value sidecar (path + ".cfg") echoes the generator config.
void save_bars(const Dataset& ds, const std::filesystem::path& path,
               const BarsConfig& cfg);
Dataset load_bars(const std::filesystem::path& path);

}  // namespace dan
