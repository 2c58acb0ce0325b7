import json

import pytest
from hypothesis import given, strategies as st

from shelterplan import datagen
from shelterplan.domain import (
    ATTRIBUTES,
    DemographicProfile,
    DomainError,
    ProblemInstance,
    ServiceNeed,
    UnknownServiceError,
    YouthProfile,
    demographic_compatible,
    instance_from_json,
    instance_to_json,
    periodicity,
    service_offered,
)

from conftest import bed_catalog, bed_need, make_instance, org, psi_org, youth


class TestPeriodicity:
    @pytest.mark.parametrize("d,f,expected", [(60, 4, 15), (7, 7, 1), (10, 3, 3)])
    def test_examples(self, d, f, expected):
        assert periodicity(d, f) == expected

    @pytest.mark.parametrize("d,f", [(10, 0), (5, 6), (0, 1), (10, -1)])
    def test_invalid_needs_rejected(self, d, f):
        with pytest.raises(DomainError):
            periodicity(d, f)

    @given(st.integers(1, 1000), st.integers(1, 1000))
    def test_monotone_in_frequency_and_product_bound(self, d, f):
        f = min(f, d)
        omega = periodicity(d, f)
        assert omega >= 1
        assert f * omega <= d
        if f + 1 <= d:
            assert periodicity(d, f + 1) <= omega


def org_table():
    return datagen.load_default_tables().org_accepts


class TestCompatibility:
    def test_cis_male_rejected_by_org1(self):
        accepts = DemographicProfile(org_table()[1])
        bits = [0] * len(ATTRIBUTES)
        bits[ATTRIBUTES.index("age_under_21")] = 1
        bits[ATTRIBUTES.index("cis_male")] = 1
        bits[ATTRIBUTES.index("citizen")] = 1
        assert demographic_compatible(DemographicProfile(tuple(bits)), accepts) is False

    def test_all_ones_accepts_everyone(self):
        ones = DemographicProfile.all_ones(len(ATTRIBUTES))
        bits = tuple(1 if i % 2 else 0 for i in range(len(ATTRIBUTES)))
        assert demographic_compatible(DemographicProfile(bits), ones) is True

    def test_adult_with_children_rejected_by_org7(self):
        accepts = DemographicProfile(org_table()[7])
        bits = [0] * len(ATTRIBUTES)
        bits[ATTRIBUTES.index("age_21_plus")] = 1
        bits[ATTRIBUTES.index("cis_female")] = 1
        bits[ATTRIBUTES.index("children")] = 1
        assert demographic_compatible(DemographicProfile(tuple(bits)), accepts) is False

    def test_length_mismatch_is_programming_error(self):
        with pytest.raises(DomainError):
            demographic_compatible(
                DemographicProfile((1, 0)), DemographicProfile((1, 0, 1))
            )

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=24))
    def test_self_and_all_ones(self, bits):
        profile = DemographicProfile(tuple(bits))
        assert demographic_compatible(profile, profile)
        assert demographic_compatible(profile, DemographicProfile.all_ones(len(bits)))

    @given(
        st.lists(st.integers(0, 1), min_size=1, max_size=16),
        st.lists(st.integers(0, 1), min_size=1, max_size=16),
        st.data(),
    )
    def test_antitone_in_org_mask(self, ybits, obits, data):
        n = min(len(ybits), len(obits))
        y = DemographicProfile(tuple(ybits[:n]))
        o = list(obits[:n])
        before = demographic_compatible(y, DemographicProfile(tuple(o)))
        idx = data.draw(st.integers(0, n - 1))
        o[idx] = 0
        after = demographic_compatible(y, DemographicProfile(tuple(o)))
        if not before:
            assert not after


@pytest.fixture(scope="module")
def base():
    tables = datagen.load_default_tables()
    catalog = datagen.build_catalog(tables)
    config = datagen.GenerationConfig(n_youth=10, horizon_T=30)
    orgs = datagen.build_organizations(config, tables, catalog)
    return catalog, {o.id: o for o in orgs}


class TestServiceOffered:

    def test_org1_does_not_offer_mental_health_low(self, base):
        catalog, orgs = base
        mh_low = next(
            s.id for s in catalog if s.category == "Mental Health" and s.intensity == "Low"
        )
        assert service_offered(orgs[1], mh_low, catalog) is False

    def test_every_org_offers_bed(self, base):
        catalog, orgs = base
        for s in range(1, 9):
            assert service_offered(orgs[s], 1, catalog) is True

    def test_psi_offers_everything(self, base):
        catalog, orgs = base
        psi = max(orgs)
        for sid in catalog.ids():
            assert service_offered(orgs[psi], sid, catalog) is True

    def test_unknown_service_raises(self, base):
        catalog, orgs = base
        with pytest.raises(UnknownServiceError):
            service_offered(orgs[1], 999, catalog)


class TestTypes:
    def test_need_window_and_frequency_invariants(self):
        with pytest.raises(DomainError):
            ServiceNeed(1, 5, 6, 1, 3)  # f > d
        with pytest.raises(DomainError):
            ServiceNeed(1, 5, 1, 4, 3)  # a > b
        need = ServiceNeed(1, 10, 3, 2, 5)
        assert need.omega == 3

    def test_youth_requires_exactly_one_bed_need(self):
        with pytest.raises(DomainError):
            youth(1, 1, [ServiceNeed(2, 5, 1, 1, 3)])
        with pytest.raises(DomainError):
            youth(1, 1, [bed_need(3, 1, 2), bed_need(3, 1, 2)])

    def test_need_cannot_open_before_arrival(self):
        with pytest.raises(DomainError):
            youth(1, 5, [bed_need(3, 4, 6)])

    def test_capacity_above_headroom_rejected(self):
        with pytest.raises(DomainError):
            org(1, cap={1: 5}, head={1: 4})

    def test_housing_must_have_zero_assign_cost(self):
        with pytest.raises(DomainError):
            org(1, r=2.0)

    def test_instance_requires_exactly_one_psi(self):
        inst = make_instance(10, bed_catalog(), [youth(1, 1, [bed_need(3, 1, 2)])], [org(1)])
        with pytest.raises(DomainError):
            inst.validate()
        inst2 = make_instance(
            10,
            bed_catalog(),
            [youth(1, 1, [bed_need(3, 1, 2)])],
            [org(1), psi_org(2, [1])],
        )
        inst2.validate()


class TestSerialization:
    def test_round_trip_is_identity(self):
        config = datagen.GenerationConfig(n_youth=8, horizon_T=25, bed_scale=0.1, seed=9)
        inst = datagen.generate_instance(config)
        text = instance_to_json(inst)
        again = instance_to_json(instance_from_json(text))
        assert text == again

    def test_schema_version_checked(self):
        doc = json.loads(instance_to_json(datagen.generate_instance(
            datagen.GenerationConfig(n_youth=2, horizon_T=10, seed=1))))
        doc["schema_version"] = 99
        with pytest.raises(DomainError):
            instance_from_json(json.dumps(doc))
