// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <string_view>

#include "qatf/kernels.hpp"

namespace qatf::kernels {

const KernelTable* avx2_table_impl();

namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* resolve() {
  const KernelTable* avx2 = avx2_table();
  if (const char* env = std::getenv("QATF_KERNELS")) {
    const std::string_view want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && avx2) return avx2;
  }
  return avx2 ? avx2 : &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{resolve()};
  return table;
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable* table = cpu_has_avx2_fma() ? avx2_table_impl() : nullptr;
  return table;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

ScopedKernelOverride::ScopedKernelOverride(const KernelTable& table)
    : previous_(current().exchange(&table, std::memory_order_acq_rel)) {}

ScopedKernelOverride::~ScopedKernelOverride() { current().store(previous_, std::memory_order_release); }

}  // namespace qatf::kernels
