// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace latflow {

// Every failure carries a short machine-readable category. The CLI prints it
// as `error[<category>]: <message>` on a single line.
class Error : public std::runtime_error {
   public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

   private:
    std::string category_;
};

#define LATFLOW_DEFINE_ERROR(Name, tag)                                         \
    class Name : public Error {                                                 \
       public:                                                                  \
        explicit Name(const std::string& message) : Error(tag, message) {}      \
    };

LATFLOW_DEFINE_ERROR(DimensionError, "dimension")
LATFLOW_DEFINE_ERROR(ContractError, "contract")
LATFLOW_DEFINE_ERROR(OptimizerError, "optimizer")
LATFLOW_DEFINE_ERROR(SignalError, "signal")
LATFLOW_DEFINE_ERROR(TrainingError, "training")
LATFLOW_DEFINE_ERROR(SolverError, "solver")
LATFLOW_DEFINE_ERROR(ConfigError, "config")
LATFLOW_DEFINE_ERROR(IoError, "io")
LATFLOW_DEFINE_ERROR(IngestionError, "ingestion")
LATFLOW_DEFINE_ERROR(EnvironmentError, "environment")
LATFLOW_DEFINE_ERROR(EvalError, "eval")

#undef LATFLOW_DEFINE_ERROR

}  // namespace latflow
