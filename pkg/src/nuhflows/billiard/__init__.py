from .tables import BilliardTable, table_from_config, load_table
from .dynamics import (
    FlowState, CollisionState, FlightSegment, Corridor, CollisionBatch,
    next_collision, billiard_map, flight_time, flow, outgoing, detect_corridors, corridor_width,
    infinite_horizon, first_return, sample_invariant, map_batch, sample_flow_states,
    free_flights, displacement_ensemble, trajectory, write_trajectory_csv, phase_distance,
)
