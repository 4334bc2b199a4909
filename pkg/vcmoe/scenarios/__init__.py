from vcmoe.scenarios.registration import make, register, registry

register(
    id='Sim1',
    entry_point='vcmoe.scenarios.scenario_sim1_v0:GaussianTwoExperts',
    kwargs=dict(n=500),
)

register(
    id='Sim2',
    entry_point='vcmoe.scenarios.scenario_sim2_v0:BinomialTwoExperts',
    kwargs=dict(n=500, trials=100),
)

register(
    id='Sim3',
    entry_point='vcmoe.scenarios.scenario_sim3_v0:SoftmaxThreeExperts',
    kwargs=dict(n=1000, lattice=20),
)
