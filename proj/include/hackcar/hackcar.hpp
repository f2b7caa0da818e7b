#pragma once

#include "hackcar/can_core.hpp"
#include "hackcar/ecu_nodes.hpp"
#include "hackcar/pure_pursuit.hpp"
#include "hackcar/scenario.hpp"
#include "hackcar/teleop.hpp"
#include "hackcar/vehicle_plant.hpp"
#include "hackcar/virtual_bus.hpp"
