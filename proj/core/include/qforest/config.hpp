#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "qforest/dataset.hpp"
#include "qforest/encoder.hpp"
#include "qforest/ftn.hpp"

namespace qforest {

struct DatasetSpec {
    std::string name;  // "mnist" or "cifar10"
    std::string image_path;
    std::string label_path;
    std::string test_image_path;
    std::string test_label_path;
    std::vector<std::string> batch_paths;
    std::vector<std::string> test_batch_paths;
    std::size_t downscale_side = 0;  // 0 = keep native resolution
    std::size_t subset = 0;          // seeded shuffle + prefix; 0 = full
    std::size_t test_subset = 0;
    std::uint64_t seed = 1234;
};

struct ModelSpec {
    std::size_t classes = 10;
    std::size_t channels = 1;  // k; chi = 2^k
    std::vector<std::array<int, 2>> shifts;  // empty = default assignment
};

struct RunConfig {
    DatasetSpec dataset;
    ModelSpec model;
    TrainConfig train;
    EncodeConfig encode;
    std::string output_dir = "out";
};

/// Parses the JSON run configuration. Unknown keys are rejected; a "chi" entry, when
/// present, must equal 2^channels.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);

/// Annotated example configuration listing every field and its default.
std::string config_schema_text();

/// Resolves a dataset path: the path itself if it exists, otherwise
/// $QFOREST_DATA_DIR/<path>. Throws MissingPathError naming the original path.
std::string resolve_data_path(const std::string& path);

struct LoadedData {
    ImageDataset train;
    ImageDataset test;
    bool has_test = false;
};

/// Loads, downscales and subsets the configured dataset. subset_override, when
/// nonzero, replaces the spec's training subset size.
LoadedData load_dataset(const DatasetSpec& spec, std::size_t subset_override = 0);

}  // namespace qforest
