// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iostream>
#include <mutex>
#include <set>
#include <string>

namespace wmaudit {

/// Writes "warning: <msg>" to stderr the first time a given message is seen.
inline void warn_once(const std::string& msg) {
  static std::mutex mu;
  static std::set<std::string> seen;
  std::lock_guard lock(mu);
  if (seen.insert(msg).second) std::clog << "warning: " << msg << '\n';
}

}  // namespace wmaudit
