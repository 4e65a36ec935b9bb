#pragma once

#include "conthrtf/errors.hpp"
#include "conthrtf/excitation.hpp"
#include "conthrtf/harness/archive.hpp"
#include "conthrtf/harness/config.hpp"
#include "conthrtf/harness/experiment.hpp"
#include "conthrtf/harness/ingest.hpp"
#include "conthrtf/io/wav.hpp"
#include "conthrtf/metrics.hpp"
#include "conthrtf/simulator.hpp"
#include "conthrtf/sphere_hrtf.hpp"
#include "conthrtf/sysid/diag_kalman.hpp"
#include "conthrtf/sysid/em.hpp"
#include "conthrtf/sysid/kalman.hpp"
#include "conthrtf/sysid/nlms.hpp"
#include "conthrtf/sysid/segments.hpp"
#include "conthrtf/sysid/state_space.hpp"
