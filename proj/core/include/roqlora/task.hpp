// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace roqlora {

/// The seven evaluation tasks, in report column order.
enum class Task { RoMedQA, RoQA, REDv2, RoMD, SaRoCo, RoSum, RoSTS };

inline constexpr std::array<Task, 7> kAllTasks = {Task::RoMedQA, Task::RoQA,  Task::REDv2, Task::RoMD,
                                                  Task::SaRoCo,  Task::RoSum, Task::RoSTS};

constexpr std::string_view task_name(Task t) {
    switch (t) {
        case Task::RoMedQA: return "RoMedQA";
        case Task::RoQA: return "RoQA";
        case Task::REDv2: return "REDv2";
        case Task::RoMD: return "RoMD";
        case Task::SaRoCo: return "SaRoCo";
        case Task::RoSum: return "RoSum";
        case Task::RoSTS: return "RoSTS";
    }
    return "?";
}

/// Case-insensitive lookup by name.
std::optional<Task> parse_task(std::string_view name);

}  // namespace roqlora
