#pragma once

#include <string>

#include "qforest/embedding.hpp"
#include "qforest/ftn.hpp"

namespace qforest {

/// Model container: magic "QFMODEL\n", a little-endian u64 header length, a UTF-8 JSON
/// header declaring kind/dims/shifts and the tensor manifest, then the tensors as raw
/// little-endian IEEE-754 doubles in declared order. Round-trips are bit-identical.
enum class ModelKind { ftn, qftn };

ModelKind peek_kind(const std::string& path);

void save_ftn(const std::string& path, const FTNClassifier& model);
FTNClassifier load_ftn(const std::string& path);

void save_qftn(const std::string& path, const QFTNModel& model);
QFTNModel load_qftn(const std::string& path);

}  // namespace qforest
