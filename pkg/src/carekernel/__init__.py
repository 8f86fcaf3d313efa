"""carekernel: a multi-tenant mHealth study orchestration service.

Subsystems:
  gateway      authentication, study-scoped authorization, identity vault
  collection   data streams, batch ingestion, connector sync, daily summaries
  profiles     typed key-value profiles for participants and groups
  interactions declarative questionnaire/EMA engine
  rpii         trigger/condition/action rule engine with execution log
  dashboard    studies, recruitment links, annotations, manual notifications
  storage      embedded transactional store backing everything above
  simulator    scripted participant/device simulator CLI
"""

__version__ = "0.1.0"
