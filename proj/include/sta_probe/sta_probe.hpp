#ifndef STA_PROBE_STA_PROBE_HPP
#define STA_PROBE_STA_PROBE_HPP

#include "sta_probe/common.hpp"
#include "sta_probe/norms.hpp"
#include "sta_probe/prompt.hpp"
#include "sta_probe/backend.hpp"
#include "sta_probe/remote_backend.hpp"
#include "sta_probe/metrics.hpp"
#include "sta_probe/trial.hpp"
#include "sta_probe/runner.hpp"
#include "sta_probe/report.hpp"

#endif  // STA_PROBE_STA_PROBE_HPP
